"""
Scenario Runner - nạp scenario YAML, huấn luyện primitive, chạy rollout,
tính metrics và ghi kết quả
"""
import asyncio
import logging
from pathlib import Path
from typing import List, Dict, Any, Optional

import numpy as np
import yaml
from pydantic import ValidationError

from dmp_adaptation import batch_solve
from dmp_basis import new_basis
from dmp_data_models import (
    Direction,
    Generalization,
    OrientationSpace,
    RunMetrics,
    RuntimeSettings,
    Scenario,
    ViaAction,
    ViaPointEvent,
    get_runtime_settings,
)
from dmp_dynamics import (
    ORIENTATION_INERTIA,
    POSITION_INERTIA,
    CouplingTerm,
    RolloutConfig,
    TrajectoryRecord,
    log_space_torque_map,
    make_force_coupling,
    run_rollout,
)
from dmp_errors import DmpError, ScenarioError
from dmp_model import Demonstration, DmpModel, StateTriplet, load_demonstration_csv, train_model
from quaternion_math import align_hemisphere, quat_log, unit_quaternion
from scene_environment import ForceScript, Obstacle, ObstacleCoupling, TargetSchedule
from synthetic_demos import generate_demo
from trajectory_store import TrajectoryStore, get_trajectory_store

logger = logging.getLogger(__name__)

# Classes counted against the residual tolerance
HARD_RESIDUALS = ("start_position", "goal_position", "boundary_velocity", "boundary_acceleration", "via")
# Goal-position residual allowed on the last tick, relative to max(1, |goal|)
FINAL_GOAL_RESIDUAL_TOL = 1e-4


def load_scenario(path: str) -> Scenario:
    """Parse and validate a scenario file"""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"Scenario file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ScenarioError(f"{path}: invalid YAML: {e}")
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(f"{path}: {e}")


def error_payload(e: Exception) -> Dict[str, Any]:
    return {"status": "error", "error_type": type(e).__name__, "detail": str(e)}


def chord_deviation(record: TrajectoryRecord, y_start: np.ndarray, goal: np.ndarray, forward: bool = True) -> np.ndarray:
    """Signed largest deviation of y from the start-goal chord, per DoF"""
    fraction = record.s if forward else 1.0 - record.s
    chord = y_start[None, :] + fraction[:, None] * (goal - y_start)[None, :]
    deviation = record.y - chord
    index = np.argmax(np.abs(deviation), axis=0)
    return deviation[index, np.arange(deviation.shape[1])]


def compute_metrics(
    record: TrajectoryRecord,
    scenario: str,
    generalization: Generalization,
    pass_name: str = "forward",
    forward: bool = True,
) -> RunMetrics:
    y_start = record.y[0]
    goal = record.goal[-1]
    finite = bool(np.all(np.isfinite(record.y)) and np.all(np.isfinite(record.ddy)))
    min_surface = {name: float(values.min()) for name, values in record.surface_values.items()}
    residuals = {name: float(values.max()) for name, values in record.residuals.items()}
    hard = [residuals[name] for name in HARD_RESIDUALS if name in residuals]
    final_goal = record.residuals.get("goal_position")
    final_goal_residual = float(final_goal[-1]) if final_goal is not None and final_goal.size else None
    goal_held = final_goal_residual is None or (
        final_goal_residual <= FINAL_GOAL_RESIDUAL_TOL * max(1.0, float(np.max(np.abs(goal))))
    )

    return RunMetrics(
        scenario=scenario,
        generalization=generalization,
        pass_name=pass_name,
        steps=int(record.t.size),
        amplitude=float(np.max(np.ptp(record.y, axis=0))),
        endpoint_error=float(np.linalg.norm(record.y[-1] - goal)),
        final_velocity_norm=float(np.linalg.norm(record.dy[-1])),
        via_errors=record.via_errors,
        peak_acceleration=float(np.max(np.abs(record.ddy))),
        peak_coupling=float(record.coupling_norm.max(initial=0.0)),
        peak_repulsive_force=float(record.repulsive_norm.max(initial=0.0)),
        min_surface_value=min_surface,
        latency_mean_ms=float(record.latency_ms.mean()) if record.latency_ms.size else 0.0,
        latency_p99_ms=float(np.percentile(record.latency_ms, 99)) if record.latency_ms.size else 0.0,
        max_constraint_residual=max(hard, default=0.0),
        final_goal_residual=final_goal_residual,
        constraint_residuals=residuals,
        chord_deviation=chord_deviation(record, y_start, goal, forward).tolist(),
        max_excursion=float(np.max(np.abs(record.y - y_start))),
        hard_invariants_ok=finite and goal_held and all(v > 0.0 for v in min_surface.values()),
    )


class PreparedScenario:
    """Scenario with its trained model and resolved inputs"""

    def __init__(self, scenario: Scenario, demo: Demonstration, model: DmpModel, y0: np.ndarray, goal: np.ndarray):
        self.scenario = scenario
        self.demo = demo
        self.model = model
        self.y0 = y0
        self.goal = goal

    @property
    def orientation(self) -> bool:
        return self.model.kind == "orientation"

    @property
    def scene_scale(self) -> float:
        return max(float(np.max(np.ptp(self.demo.positions, axis=1))), float(np.linalg.norm(self.goal - self.y0)), 1e-9)


class ScenarioRunner:
    """Service chạy scenario: train → rollout → metrics → outputs"""

    def __init__(self, store: TrajectoryStore, settings: RuntimeSettings):
        self.store = store
        self.settings = settings

    # ------------------------------------------------------------------
    # Preparation
    # ------------------------------------------------------------------

    def build_demo(self, scenario: Scenario, base_dir: Path) -> Demonstration:
        if scenario.demo.file is not None:
            return load_demonstration_csv(str(base_dir / scenario.demo.file))
        return generate_demo(scenario.demo.generator, scenario.demo.params)

    def _to_model_space(self, values: List[float], demo: Demonstration, reference: np.ndarray) -> np.ndarray:
        """Quaternion inputs become log vectors on the demo's hemisphere"""
        if demo.kind != "orientation":
            return np.asarray(values, dtype=float)
        if len(values) != 4:
            raise ScenarioError("Orientation targets are quaternions [w, x, y, z]")
        return quat_log(align_hemisphere(unit_quaternion(values), reference))

    def prepare(self, scenario: Scenario, base_dir: Path) -> PreparedScenario:
        demo = self.build_demo(scenario, base_dir)
        settings = scenario.model
        basis = new_basis(settings.kernels, settings.width_factor)
        model = train_model(demo, basis, stiffness=settings.stiffness, damping=settings.damping, ridge=settings.ridge)
        if scenario.duration is not None:
            model.duration = scenario.duration

        y0 = demo.positions[:, 0].copy()
        goal = demo.positions[:, -1].copy()
        if scenario.y0 is not None:
            y0 = self._to_model_space(scenario.y0, demo, demo.quaternions[0] if demo.quaternions is not None else None)
        if scenario.goal is not None:
            goal = self._to_model_space(scenario.goal, demo, demo.quaternions[-1] if demo.quaternions is not None else None)
        if y0.size != demo.n or goal.size != demo.n:
            raise ScenarioError(f"y0 and goal must have {demo.n} entries")
        return PreparedScenario(scenario, demo, model, y0, goal)

    def targets(self, prepared: PreparedScenario) -> TargetSchedule:
        settings = prepared.scenario.targets
        if prepared.orientation and settings.events:
            reference = prepared.demo.quaternions[-1]
            events = [(e.time, self._to_model_space(e.goal, prepared.demo, reference)) for e in settings.events]
            return TargetSchedule(prepared.goal, events)
        return TargetSchedule.from_settings(prepared.goal, settings)

    def via_schedule(self, prepared: PreparedScenario) -> List[ViaPointEvent]:
        scenario = prepared.scenario
        events = list(scenario.via_points)
        stack = scenario.via_stack
        if stack is not None:
            axis = np.asarray(stack.axis, dtype=float)
            axis = axis / np.linalg.norm(axis)
            phases = np.linspace(stack.phase_start, stack.phase_end, stack.count)
            for k, phase in enumerate(phases):
                # Last via sits at the goal, earlier ones further out along the axis
                offset = axis * stack.spacing * (stack.count - 1 - k)
                events.append(ViaPointEvent(
                    id=f"stack{k}", time=stack.time, action=ViaAction.ADD, phase=float(phase),
                    point=offset.tolist(), relative_to_goal=True,
                ))
        return events

    def couplings(self, prepared: PreparedScenario, seed: int, with_forces: bool = True) -> List[CouplingTerm]:
        scenario = prepared.scenario
        terms: List[CouplingTerm] = []
        if scenario.obstacles:
            if prepared.orientation:
                raise ScenarioError("Obstacles are only supported for position primitives")
            obstacles = [Obstacle.from_spec(spec, prepared.scene_scale) for spec in scenario.obstacles]
            terms.append(ObstacleCoupling(obstacles))
        if with_forces and scenario.forces.pulses:
            script = ForceScript(scenario.forces, prepared.model.n, seed=seed)
            inertia = scenario.force_coupling.inertia or (ORIENTATION_INERTIA if prepared.orientation else POSITION_INERTIA)
            log_space = prepared.orientation and scenario.orientation_space == OrientationSpace.LOG
            terms.append(make_force_coupling(
                inertia, gate=scenario.force_coupling.gate, force_source=script.force,
                force_map=log_space_torque_map if log_space else None,
            ))
        return terms

    def rollout_config(self, prepared: PreparedScenario, generalization: Generalization, dt: float,
                       direction: Direction, debug: bool, **overrides) -> RolloutConfig:
        scenario = prepared.scenario
        values = dict(
            y0=prepared.y0,
            goal=prepared.goal,
            generalization=generalization,
            dt=dt,
            duration=prepared.model.duration,
            tail=scenario.tail,
            direction=direction,
            history_mode=scenario.history_mode,
            eps=scenario.epsilon_profile(),
            canonical_gain=scenario.canonical_gain,
            phase_stopping=scenario.phase_stopping.enabled,
            phase_stop_gain=scenario.phase_stopping.gain,
            state_phase_grid=scenario.state_phase_grid,
            fast_path=scenario.fast_path,
            goal_filter_gain=scenario.goal_filter_gain,
            orientation_space=scenario.orientation_space,
            debug=debug,
        )
        values.update(overrides)
        return RolloutConfig(**values)

    # ------------------------------------------------------------------
    # Passes
    # ------------------------------------------------------------------

    def run_pass(self, prepared: PreparedScenario, generalization: Generalization, dt: float,
                 seed: int, debug: bool = False) -> TrajectoryRecord:
        """Forward pass with every scripted signal"""
        config = self.rollout_config(prepared, generalization, dt, prepared.scenario.direction, debug,
                                     record_history=debug)
        return run_rollout(
            prepared.model, config,
            targets=self.targets(prepared),
            via_schedule=self.via_schedule(prepared),
            couplings=self.couplings(prepared, seed),
        )

    def run_reverse(self, prepared: PreparedScenario, forward: TrajectoryRecord, generalization: Generalization,
                    dt: float, seed: int, debug: bool = False) -> TrajectoryRecord:
        """Retraction seeded with the final weights; only the static scene acts"""
        direction = Direction.REVERSE if prepared.scenario.direction == Direction.FORWARD else Direction.FORWARD
        config = self.rollout_config(
            prepared, generalization, dt, direction, debug,
            y0=forward.y[-1].copy(), goal=prepared.y0.copy(),
            W_init=forward.W_final if generalization == Generalization.DMPP else None,
            phase_stopping=False,
        )
        return run_rollout(prepared.model, config, couplings=self.couplings(prepared, seed, with_forces=False))

    async def _write_pass(self, name: str, record: TrajectoryRecord, metrics: RunMetrics, scenario: Scenario,
                          debug: bool) -> Dict[str, Optional[str]]:
        outputs: Dict[str, Optional[str]] = {}
        if scenario.outputs.trajectory:
            outputs["trajectory"] = str(await self.store.save_trajectory(name, record))
            outputs["trajectory_json"] = str(await self.store.save_trajectory_json(name, record))
        if scenario.outputs.metrics:
            outputs["metrics"] = str(await self.store.save_metrics(name, metrics.model_dump(mode="json")))
        if debug and record.debug_records:
            outputs["debug"] = str(await self.store.save_debug(name, record.debug_records))
        return outputs

    async def _run_generalization(self, prepared: PreparedScenario, generalization: Generalization, dt: float,
                                  seed: int, reverse: bool, debug: bool,
                                  semaphore: asyncio.Semaphore) -> List[Dict[str, Any]]:
        scenario = prepared.scenario
        slug = generalization.value.replace("+", "_")
        forward_dir = scenario.direction == Direction.FORWARD
        passes = []

        async with semaphore:
            record = await asyncio.to_thread(self.run_pass, prepared, generalization, dt, seed, debug)
        metrics = compute_metrics(record, scenario.name, generalization, "forward", forward_dir)
        if debug and record.adaptation is not None:
            metrics.oracle_gap = self.oracle_check(record)
        name = f"{scenario.name}_{slug}_forward"
        passes.append({"name": name, "metrics": metrics, "record": record,
                       "outputs": await self._write_pass(name, record, metrics, scenario, debug)})

        if reverse:
            async with semaphore:
                back = await asyncio.to_thread(self.run_reverse, prepared, record, generalization, dt, seed, debug)
            metrics = compute_metrics(back, scenario.name, generalization, "reverse", not forward_dir)
            name = f"{scenario.name}_{slug}_reverse"
            passes.append({"name": name, "metrics": metrics, "record": back,
                           "outputs": await self._write_pass(name, back, metrics, scenario, debug)})
        return passes

    async def run(
        self,
        scenario_path: str,
        compare: Optional[Generalization] = None,
        reverse: Optional[bool] = None,
        dt: Optional[float] = None,
        seed: Optional[int] = None,
        dump_debug: bool = False,
        semaphore: Optional[asyncio.Semaphore] = None,
    ) -> Dict[str, Any]:
        """Run one scenario file; returns a status payload with per-pass metrics"""
        logger.info(f"🚀 Running scenario {scenario_path}")
        try:
            scenario = load_scenario(scenario_path)
        except ScenarioError as e:
            logger.error(f"❌ Invalid scenario: {e}")
            payload = error_payload(e)
            payload["exit_code"] = 2
            return payload

        dt = dt or self.settings.dt or scenario.dt
        seed = scenario.seed if seed is None else seed
        reverse = scenario.reverse if reverse is None else reverse
        debug = dump_debug or scenario.outputs.debug
        generalizations = [scenario.generalization]
        if compare is not None and compare not in generalizations:
            generalizations.append(compare)

        semaphore = semaphore or asyncio.Semaphore(self.settings.workers)
        try:
            prepared = self.prepare(scenario, Path(scenario_path).parent)
            results = await asyncio.gather(*[
                self._run_generalization(prepared, g, dt, seed, reverse, debug, semaphore) for g in generalizations
            ])
        except DmpError as e:
            exit_code = 2 if isinstance(e, ScenarioError) else 1
            logger.error(f"❌ Scenario '{scenario.name}' failed: {e}")
            await self.store.save_error(scenario.name, type(e).__name__, str(e))
            payload = error_payload(e)
            payload["exit_code"] = exit_code
            payload["scenario"] = scenario.name
            return payload

        passes = [p for group in results for p in group]
        ok = all(p["metrics"].hard_invariants_ok for p in passes)
        for p in passes:
            m = p["metrics"]
            logger.info(
                f"{'✅' if m.hard_invariants_ok else '⚠️'} {p['name']}: endpoint {m.endpoint_error:.2e}, "
                f"peak |ddy| {m.peak_acceleration:.3g}, residual {m.max_constraint_residual:.1e}"
            )
        return {
            "status": "success" if ok else "failed",
            "scenario": scenario.name,
            "exit_code": 0 if ok else 1,
            "passes": passes,
            "prepared": prepared,
        }

    async def run_many(self, paths: List[str], **options) -> List[Dict[str, Any]]:
        """Independent scenarios concurrently, bounded by DMPP_WORKERS"""
        semaphore = asyncio.Semaphore(self.settings.workers)
        return list(await asyncio.gather(*[self.run(path, semaphore=semaphore, **options) for path in paths]))

    def validate(self, scenario_path: str) -> Dict[str, Any]:
        try:
            scenario = load_scenario(scenario_path)
        except ScenarioError as e:
            return {**error_payload(e), "exit_code": 2}
        return {"status": "success", "scenario": scenario.name, "exit_code": 0}

    def oracle_check(self, record: TrajectoryRecord) -> float:
        """Relative Frobenius gap between the recursive weights and the batch solve"""
        st = record.adaptation
        if st is None or not st.record_history:
            raise ScenarioError("Oracle check needs a DMP++ rollout recorded with record_history")
        boundary = (StateTriplet.at_rest(st.y0), st.goal)
        W = batch_solve(st.model, boundary, st.state_history, list(st.via_points.values()), st.eps,
                        st.direction, W_init=st.W_init)
        return float(np.linalg.norm(st.W - W) / np.linalg.norm(W))


# Global scenario runner instance
scenario_runner: Optional[ScenarioRunner] = None


def get_scenario_runner(out_dir: Optional[str] = None) -> ScenarioRunner:
    """Get or create the scenario runner"""
    global scenario_runner

    store = get_trajectory_store(out_dir)
    if scenario_runner is None or scenario_runner.store is not store:
        scenario_runner = ScenarioRunner(store, get_runtime_settings())
    return scenario_runner
