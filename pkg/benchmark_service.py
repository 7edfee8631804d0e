"""
Benchmark Service - đo độ trễ mỗi bước adaptation theo số kernel K
"""
import logging
import time
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field

from dmp_adaptation import PhasePair, init_adaptation
from dmp_basis import new_basis
from dmp_data_models import HistoryMode
from dmp_errors import DmpArgumentError
from dmp_model import DmpModel, acceleration_precision

logger = logging.getLogger(__name__)

DEFAULT_KERNELS = (10, 20, 40, 80)
WARMUP_STEPS = 20


class BenchmarkRow(BaseModel):
    """Latency of AdaptationState.step for one K"""
    kernels: int = Field(..., description="Number of kernels K")
    dofs: int = Field(..., description="Degrees of freedom n")
    steps: int = Field(..., description="Timed steps")
    mean_ms: float = Field(..., description="Mean per-step latency (ms)")
    p99_ms: float = Field(..., description="99th percentile per-step latency (ms)")


class BenchmarkReport(BaseModel):
    rows: List[BenchmarkRow] = Field(default_factory=list)
    exponent: Optional[float] = Field(None, description="Slope of log(mean) against log(K)")


def random_model(K: int, n: int, rng: np.random.Generator, duration: float = 2.0) -> DmpModel:
    """Untrained primitive with random weights and the usual acceleration prior"""
    basis = new_basis(K, 1.5)
    precision = acceleration_precision(basis, np.linspace(0.0, 1.0, max(4 * K, 200)))
    return DmpModel(basis, rng.normal(size=(K, n)), precision, duration)


def time_steps(K: int, n: int, steps: int, seed: int = 0) -> np.ndarray:
    """Per-step latencies (ms); every step carries a state constraint"""
    rng = np.random.default_rng([seed, K, n])
    model = random_model(K, n, rng)
    st = init_adaptation(model, rng.normal(size=n), rng.normal(size=n), state_phase_grid=1e-12,
                         history_mode=HistoryMode.PRESERVE_LEARNED)
    goal = st.goal.y.copy()
    total = steps + WARMUP_STEPS
    phases = np.linspace(0.0, 1.0, total + 2)[1:-1]
    ds = 1.0 / model.duration
    latencies = np.empty(steps)
    previous = 0.0
    for k, s in enumerate(phases):
        pair = PhasePair(float(s), ds, previous, ds, 0.0)
        started = time.perf_counter()
        st.step(pair, goal)
        elapsed = (time.perf_counter() - started) * 1e3
        if k >= WARMUP_STEPS:
            latencies[k - WARMUP_STEPS] = elapsed
        previous = float(s)
    return latencies


def complexity_exponent(kernels: List[int], mean_ms: List[float]) -> Optional[float]:
    if len(kernels) < 2:
        return None
    slope, _ = np.polyfit(np.log(kernels), np.log(mean_ms), 1)
    return float(slope)


def run_benchmark(kernels=DEFAULT_KERNELS, n: int = 6, steps: int = 500, seed: int = 0) -> BenchmarkReport:
    """Latency table over K plus the fitted complexity exponent"""
    if n < 1:
        raise DmpArgumentError(f"n must be at least 1, got {n}")
    if steps < 0:
        raise DmpArgumentError(f"steps must be non-negative, got {steps}")
    if steps == 0:
        logger.info("⚠️ steps=0, nothing to time")
        return BenchmarkReport()

    rows = []
    for K in kernels:
        latencies = time_steps(int(K), n, steps, seed)
        row = BenchmarkRow(
            kernels=int(K), dofs=n, steps=steps,
            mean_ms=float(latencies.mean()), p99_ms=float(np.percentile(latencies, 99)),
        )
        logger.info(f"⏱️ K={row.kernels} n={n}: mean {row.mean_ms:.4f} ms, p99 {row.p99_ms:.4f} ms")
        rows.append(row)

    exponent = complexity_exponent([r.kernels for r in rows], [r.mean_ms for r in rows])
    if exponent is not None:
        logger.info(f"📈 Complexity exponent {exponent:.2f}")
    return BenchmarkReport(rows=rows, exponent=exponent)


def format_table(report: BenchmarkReport) -> str:
    lines = [f"{'K':>5} {'n':>3} {'steps':>6} {'mean_ms':>10} {'p99_ms':>10}"]
    for row in report.rows:
        lines.append(f"{row.kernels:>5} {row.dofs:>3} {row.steps:>6} {row.mean_ms:>10.4f} {row.p99_ms:>10.4f}")
    if report.exponent is not None:
        lines.append(f"exponent {report.exponent:.2f}")
    return "\n".join(lines)
