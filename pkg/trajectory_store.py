"""
Trajectory Store - writes rollout outputs (CSV / JSON) to the output directory
"""
import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Any

import aiofiles
import numpy as np

from dmp_data_models import get_runtime_settings
from dmp_dynamics import TrajectoryRecord
from dmp_model import DmpModel

logger = logging.getLogger(__name__)


def to_jsonable(value: Any) -> Any:
    """numpy arrays / scalars → plain Python for json"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def trajectory_csv(record: TrajectoryRecord) -> str:
    """t,s,y1..yn,dy1..dyn,ddy1..ddyn,u1..un"""
    buffer = io.StringIO()
    np.savetxt(buffer, record.rows(), delimiter=",", fmt="%.10g",
               header=",".join(record.columns()), comments="")
    return buffer.getvalue()


def trajectory_json(record: TrajectoryRecord) -> Dict[str, Any]:
    """Same series as the CSV, one array per quantity; (steps, n) for y, dy, ddy, u"""
    payload = {"t": record.t, "s": record.s, "y": record.y, "dy": record.dy, "ddy": record.ddy, "u": record.u}
    if record.quaternions is not None:
        payload["quaternions"] = record.quaternions
    return payload


class TrajectoryStore:
    """Async file writer for trajectories, metrics, debug dumps and models"""

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)

    def path_for(self, name: str, suffix: str) -> Path:
        return self.out_dir / f"{name}{suffix}"

    async def _write(self, path: Path, text: str) -> Optional[Path]:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            async with aiofiles.open(path, "w", encoding="utf-8") as f:
                await f.write(text)
            logger.debug(f"Wrote {path}")
            return path
        except OSError as e:
            logger.error(f"❌ Failed to write {path}: {e}")
            return None

    async def save_trajectory(self, name: str, record: TrajectoryRecord) -> Optional[Path]:
        return await self._write(self.path_for(name, "_trajectory.csv"), trajectory_csv(record))

    async def save_trajectory_json(self, name: str, record: TrajectoryRecord) -> Optional[Path]:
        return await self.save_json(name, "_trajectory.json", trajectory_json(record))

    async def save_json(self, name: str, suffix: str, payload: Any) -> Optional[Path]:
        text = json.dumps(to_jsonable(payload), indent=2, ensure_ascii=False)
        return await self._write(self.path_for(name, suffix), text)

    async def save_metrics(self, name: str, metrics: Dict[str, Any]) -> Optional[Path]:
        return await self.save_json(name, "_metrics.json", metrics)

    async def save_debug(self, name: str, records: List[Dict[str, Any]]) -> Optional[Path]:
        return await self.save_json(name, "_debug.json", records)

    async def save_error(self, name: str, error_type: str, detail: str) -> Optional[Path]:
        payload = {"status": "error", "error_type": error_type, "detail": detail}
        return await self.save_json(name, "_error.json", payload)

    async def save_model(self, path: str, model: DmpModel) -> Optional[Path]:
        text = json.dumps(to_jsonable(model.to_dict()), indent=2)
        return await self._write(Path(path), text)


# Global trajectory store instance
trajectory_store: Optional[TrajectoryStore] = None


def get_trajectory_store(out_dir: Optional[str] = None) -> TrajectoryStore:
    """Get or create the trajectory store; a different out_dir replaces it"""
    global trajectory_store

    if trajectory_store is None or (out_dir is not None and Path(out_dir) != trajectory_store.out_dir):
        if out_dir is None:
            out_dir = get_runtime_settings().out_dir
        trajectory_store = TrajectoryStore(out_dir)
        logger.info(f"📁 Output directory: {trajectory_store.out_dir}")
    return trajectory_store
