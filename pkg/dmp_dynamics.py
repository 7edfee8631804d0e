"""
DMP Dynamics - canonical and transformation systems, coupling terms and
the closed-loop rollout that ties adaptation, reference and integration
"""
import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Dict, Any, Callable

import numpy as np

from dmp_adaptation import AdaptationState, PhasePair, ViaEvents, ViaPoint, init_adaptation, via_phase_heuristic
from dmp_baselines import classical_reference, goal_filter_step
from dmp_data_models import (
    Direction,
    EpsilonProfile,
    Generalization,
    HistoryMode,
    OrientationSpace,
    ViaAction,
    ViaPointEvent,
)
from dmp_errors import DmpArgumentError, ExecutionError
from dmp_model import DmpModel, StateTriplet, evaluate_reference
from quaternion_math import (
    IDENTITY,
    align_hemisphere,
    eta_from_omega,
    omega_from_eta,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    torque_maps,
)

logger = logging.getLogger(__name__)

DEFAULT_DT = 0.002
POSITION_INERTIA = 5.0
ORIENTATION_INERTIA = 2.0


@dataclass
class PhaseState:
    """Canonical system state: s̈ = d (ṡ_d - ṡ)"""
    s: float
    ds: float
    dds: float
    ds_d: float
    T_f: float
    ds_1: float
    d: float = 40.0
    a_d: float = 1.0

    def __post_init__(self):
        if self.d <= 0.0 or self.T_f <= 0.0:
            raise DmpArgumentError(f"Canonical gain and duration must be positive (d={self.d}, T_f={self.T_f})")

    @classmethod
    def start(cls, T_f: float, direction: Direction = Direction.FORWARD, d: float = 40.0, a_d: float = 1.0) -> "PhaseState":
        forward = Direction(direction) == Direction.FORWARD
        ds_1 = (1.0 if forward else -1.0) / T_f
        return cls(s=0.0 if forward else 1.0, ds=ds_1, dds=0.0, ds_d=ds_1, T_f=T_f, ds_1=ds_1, d=d, a_d=a_d)

    @property
    def finished(self) -> bool:
        return self.s >= 1.0 if self.ds_1 > 0.0 else self.s <= 0.0


def step_canonical(p: PhaseState, dt: float, external_force_norm: float = 0.0) -> PhaseState:
    """Semi-implicit Euler; phase stops at its terminal boundary"""
    if dt <= 0.0:
        raise DmpArgumentError(f"dt must be positive, got {dt}")
    if p.finished:
        return replace(p, ds=0.0, dds=0.0)
    ds_d = p.ds_1 / (1.0 + p.a_d * external_force_norm)
    dds = p.d * (ds_d - p.ds)
    ds = p.ds + dds * dt
    s = p.s + ds * dt
    if (p.ds_1 > 0.0 and s >= 1.0) or (p.ds_1 < 0.0 and s <= 0.0):
        return replace(p, s=1.0 if p.ds_1 > 0.0 else 0.0, ds=0.0, dds=0.0, ds_d=ds_d)
    return replace(p, s=s, ds=ds, dds=dds, ds_d=ds_d)


@dataclass
class ExecutionState:
    y: np.ndarray
    dy: np.ndarray
    ddy: np.ndarray
    phase: PhaseState
    t: float = 0.0
    direction: Direction = Direction.FORWARD


def step_transformation(model: DmpModel, st: ExecutionState, ref: StateTriplet, u: np.ndarray, dt: float) -> ExecutionState:
    """ÿ = ÿ_s - D(ẏ - ẏ_s) - K(y - y_s) + u, then dy += ÿ dt, y += dy dt"""
    if dt <= 0.0:
        raise DmpArgumentError(f"dt must be positive, got {dt}")
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ExecutionError(f"Non-finite coupling term at t={st.t:.4f}")
    ddy = ref.ddy - model.damping @ (st.dy - ref.dy) - model.stiffness @ (st.y - ref.y) + u
    dy = st.dy + ddy * dt
    y = st.y + dy * dt
    if not (np.all(np.isfinite(ddy)) and np.all(np.isfinite(y))):
        raise ExecutionError(f"Non-finite state at t={st.t:.4f}")
    return replace(st, y=y, dy=dy, ddy=ddy, t=st.t + dt)


def step_orientation(model: DmpModel, Q: np.ndarray, omega: np.ndarray, reference, u: np.ndarray, dt: float):
    """ω̇ = ω̇_s - D(ω - ω_s) - K log(Q * Q̄_s) + u; Q ← exp(ω dt) * Q

    reference is (Q_s, ω_s, ω̇_s).
    """
    Q_s, omega_s, domega_s = reference
    error = quat_log(align_hemisphere(quat_mul(Q, quat_conj(Q_s)), IDENTITY))
    domega = domega_s - model.damping @ (omega - omega_s) - model.stiffness @ error + np.asarray(u, dtype=float)
    omega = omega + domega * dt
    Q = quat_mul(quat_exp(omega * dt), Q)
    if not (np.all(np.isfinite(domega)) and np.all(np.isfinite(Q))):
        raise ExecutionError("Non-finite orientation state")
    return Q, omega, domega


class CouplingTerm:
    """Acceleration-level input added to the transformation system"""

    def coupling(self, t: float, state: ExecutionState, ref: StateTriplet) -> np.ndarray:
        raise NotImplementedError()

    def force_norm(self, t: float) -> float:
        """External force magnitude seen by phase stopping"""
        return 0.0


class ForceCoupling(CouplingTerm):
    """u = J M⁻¹ f - a ÿ_s with a = sqrt(min(2||f||, 1))"""

    def __init__(
        self,
        inertia: float,
        force_source: Optional[Callable[[float], np.ndarray]] = None,
        gate: bool = True,
        force_map: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    ):
        if inertia <= 0.0:
            raise DmpArgumentError(f"Desired inertia must be positive, got {inertia}")
        self.inertia = float(inertia)
        self.force_source = force_source
        self.gate = gate
        self.force_map = force_map

    @staticmethod
    def gate_level(force: np.ndarray) -> float:
        return float(np.sqrt(min(2.0 * np.linalg.norm(force), 1.0)))

    def force(self, t: float) -> np.ndarray:
        return np.asarray(self.force_source(t), dtype=float) if self.force_source else np.zeros(0)

    def force_norm(self, t: float) -> float:
        force = self.force(t)
        return float(np.linalg.norm(force)) if force.size else 0.0

    def coupling(self, t: float, state: ExecutionState, ref: StateTriplet) -> np.ndarray:
        force = self.force(t)
        if not force.size:
            return np.zeros_like(state.y)
        mapped = self.force_map(state.y, force) if self.force_map else force
        a = self.gate_level(force) if self.gate else 0.0
        return mapped / self.inertia - a * ref.ddy


def make_force_coupling(
    M: float = POSITION_INERTIA,
    gate: bool = True,
    force_source: Optional[Callable[[float], np.ndarray]] = None,
    force_map: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
) -> ForceCoupling:
    return ForceCoupling(M, force_source=force_source, gate=gate, force_map=force_map)


def log_space_torque_map(eta: np.ndarray, torque: np.ndarray) -> np.ndarray:
    """Torque mapped into log space at the orientation exp(η)"""
    return torque_maps(quat_exp(eta), torque, to_log=True)


@dataclass
class RolloutConfig:
    y0: np.ndarray
    goal: np.ndarray
    generalization: Generalization = Generalization.DMPP
    dt: float = DEFAULT_DT
    duration: Optional[float] = None
    tail: float = 1.0
    direction: Direction = Direction.FORWARD
    history_mode: HistoryMode = HistoryMode.PRESERVE_LEARNED
    eps: EpsilonProfile = field(default_factory=EpsilonProfile)
    canonical_gain: float = 40.0
    phase_stopping: bool = False
    phase_stop_gain: float = 1.0
    state_phase_grid: float = 1e-3
    fast_path: bool = False
    goal_filter_gain: float = 4.0
    W_init: Optional[np.ndarray] = None
    orientation_space: Optional[OrientationSpace] = None
    record_history: bool = False
    debug: bool = False


@dataclass
class TrajectoryRecord:
    """Per-tick time series of one rollout"""
    t: np.ndarray
    s: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    ddy: np.ndarray
    ref: np.ndarray
    u: np.ndarray
    coupling_norm: np.ndarray
    force_norm: np.ndarray
    goal: np.ndarray
    latency_ms: np.ndarray
    residuals: Dict[str, np.ndarray]
    surface_values: Dict[str, np.ndarray]
    repulsive_norm: np.ndarray
    via_errors: Dict[str, float]
    W_final: np.ndarray
    quaternions: Optional[np.ndarray] = None
    debug_records: List[Dict[str, Any]] = field(default_factory=list)
    adaptation: Optional[AdaptationState] = None

    @property
    def n(self) -> int:
        return int(self.y.shape[1])

    def columns(self) -> List[str]:
        n = range(1, self.n + 1)
        return (["t", "s"] + [f"y{i}" for i in n] + [f"dy{i}" for i in n]
                + [f"ddy{i}" for i in n] + [f"u{i}" for i in n])

    def rows(self) -> np.ndarray:
        return np.column_stack((self.t, self.s, self.y, self.dy, self.ddy, self.u))


class _Series:
    """Row accumulator for TrajectoryRecord"""

    def __init__(self):
        self.data: Dict[str, list] = {}

    def add(self, **values):
        for key, value in values.items():
            self.data.setdefault(key, []).append(value)

    def array(self, key: str, default_shape=(0,)) -> np.ndarray:
        values = self.data.get(key)
        return np.asarray(values, dtype=float) if values else np.zeros(default_shape)


class DmpExecutor:
    """Runs one closed-loop rollout tick by tick"""

    def __init__(self, model: DmpModel, config: RolloutConfig):
        self.model = model
        self.config = config
        self.n = model.n
        if config.dt <= 0.0:
            raise DmpArgumentError(f"dt must be positive, got {config.dt}")
        self.T_f = config.duration or model.duration
        self.forward = Direction(config.direction) == Direction.FORWARD
        self.orientation = model.kind == "orientation"
        self.space = config.orientation_space or OrientationSpace.QUATERNION

        y0 = np.asarray(config.y0, dtype=float).reshape(-1)
        goal = np.asarray(config.goal, dtype=float).reshape(-1)
        if y0.size != self.n or goal.size != self.n:
            raise DmpArgumentError(f"y0 and goal must have {self.n} entries")
        self.y0 = y0
        self.initial_goal = goal

    # ------------------------------------------------------------------

    def _reference(self, st: Optional[AdaptationState], phase: PhaseState, goal: np.ndarray) -> StateTriplet:
        if st is not None:
            return evaluate_reference(self.model, st.W, phase.s, phase.ds, phase.dds)
        # Classical scaling maps phase 0 to the origin and phase 1 to the target
        origin, target = (self.y0, goal) if self.forward else (goal, self.y0)
        return classical_reference(self.model, origin, target, phase.s, phase.ds, phase.dds)

    def _via_events(self, pending: List[ViaPointEvent], t: float, goal: np.ndarray,
                    st: AdaptationState, s_now: float) -> ViaEvents:
        events = ViaEvents()
        while pending and pending[0].time <= t + 1e-12:
            event = pending.pop(0)
            if event.action == ViaAction.REMOVE:
                events.removed.append(event.id)
                continue
            point = np.asarray(event.point, dtype=float)
            if point.size != self.n:
                raise DmpArgumentError(f"Via-point '{event.id}' must have {self.n} entries")
            if event.relative_to_goal:
                point = goal + point
            phase = event.phase
            if phase is None:
                phase = via_phase_heuristic(self.model, st, point, s_now)
                logger.info(f"Via-point '{event.id}' assigned phase {phase:.4f}")
            events.added.append(ViaPoint(event.id, phase, point))
        return events

    def run(
        self,
        targets=None,
        via_schedule: Optional[List[ViaPointEvent]] = None,
        couplings: Optional[List[CouplingTerm]] = None,
    ) -> TrajectoryRecord:
        cfg = self.config
        couplings = couplings or []
        pending = sorted(via_schedule or [], key=lambda e: e.time)
        dmpp = Generalization(cfg.generalization) == Generalization.DMPP
        if pending and not dmpp:
            logger.warning("Via-points are ignored by the classical generalization")
            pending = []

        phase_stopping = cfg.phase_stopping
        if phase_stopping and HistoryMode(cfg.history_mode) == HistoryMode.ADAPT_TO_EXTERNAL:
            logger.info("Phase stopping disabled while adapting to external signals")
            phase_stopping = False

        phase = PhaseState.start(self.T_f, cfg.direction, cfg.canonical_gain, cfg.phase_stop_gain)
        previous = phase
        st: Optional[AdaptationState] = None
        if dmpp:
            st = init_adaptation(
                self.model, self.y0, self.initial_goal, cfg.eps, cfg.history_mode, cfg.direction,
                W_init=cfg.W_init, state_phase_grid=cfg.state_phase_grid, record_history=cfg.record_history,
                debug=cfg.debug, fast_path=cfg.fast_path,
            )

        state = ExecutionState(self.y0.copy(), np.zeros(self.n), np.zeros(self.n), phase, 0.0, cfg.direction)
        integrate_quaternion = self.orientation and self.space == OrientationSpace.QUATERNION
        if integrate_quaternion:
            Q = quat_exp(self.y0)
            omega = np.zeros(3)
        filtered_goal = self.initial_goal.copy()

        obstacle_terms = [c for c in couplings if hasattr(c, "last_surface_values")]
        series = _Series()
        surface_series: Dict[str, list] = {}
        residual_series: Dict[str, list] = {}
        vias_ahead: Dict[str, ViaPoint] = {}
        via_errors: Dict[str, float] = {}
        prev_y = state.y.copy()

        steps = int(round((self.T_f + cfg.tail) / cfg.dt))
        for k in range(steps + 1):
            t = k * cfg.dt
            goal = targets.goal(t) if targets is not None else self.initial_goal

            if st is not None:
                events = self._via_events(pending, t, goal, st, phase.s) if pending else ViaEvents()
                for via in events.added:
                    vias_ahead[via.id] = via
                for via_id in events.removed:
                    vias_ahead.pop(via_id, None)
                pair = PhasePair(phase.s, phase.ds, previous.s, previous.ds, previous.dds)
                measured = StateTriplet(state.y.copy(), state.dy.copy(), state.ddy.copy())
                started = time.perf_counter()
                st.step(pair, goal, events, measured)
                series.add(latency=(time.perf_counter() - started) * 1e3)
                for name, value in st.residuals().items():
                    residual_series.setdefault(name, []).append(value)
                target = goal
            else:
                if Generalization(cfg.generalization) == Generalization.CLASSICAL_GOAL_FILTER:
                    if k:
                        filtered_goal = goal_filter_step(filtered_goal, goal, cfg.goal_filter_gain, cfg.dt)
                else:
                    filtered_goal = goal
                target = filtered_goal

            ref = self._reference(st, phase, target)
            state = replace(state, phase=phase, t=t)

            if integrate_quaternion:
                Q_s = quat_exp(ref.y)
                omega_s, domega_s = omega_from_eta(Q_s, ref.dy, ref.ddy)
                u = self._coupling_sum(couplings, t, state, StateTriplet(ref.y, omega_s, domega_s))
                series.add(quaternion=Q.copy())
                Q, omega, domega = step_orientation(self.model, Q, omega, (Q_s, omega_s, domega_s), u, cfg.dt)
                Q = align_hemisphere(Q, Q_s)
                # Adaptation and the record stay in log space
                eta = quat_log(Q)
                deta, ddeta = eta_from_omega(Q, omega, domega)
                next_state = replace(state, y=eta, dy=deta, ddy=ddeta, t=t + cfg.dt)
            else:
                u = self._coupling_sum(couplings, t, state, ref)
                if self.orientation:
                    series.add(quaternion=quat_exp(state.y))
                next_state = step_transformation(self.model, state, ref, u, cfg.dt)

            series.add(
                t=t, s=phase.s, y=state.y.copy(), dy=state.dy.copy(), ddy=next_state.ddy.copy(),
                ref=ref.y.copy(), u=u.copy(), coupling_norm=float(np.linalg.norm(u)), goal=goal.copy(),
                force_norm=max((c.force_norm(t) for c in couplings), default=0.0),
                repulsive_norm=sum(c.last_force_norm for c in obstacle_terms),
            )
            for term in obstacle_terms:
                for name, value in term.last_surface_values.items():
                    surface_series.setdefault(name, []).append(value)

            self._check_via_passes(vias_ahead, via_errors, previous.s if k else phase.s, phase.s, prev_y, state.y)
            prev_y = state.y.copy()

            force_norm = max((c.force_norm(t) for c in couplings), default=0.0) if phase_stopping else 0.0
            previous = phase
            phase = step_canonical(phase, cfg.dt, force_norm)
            state = next_state

        W_final = st.W.copy() if st is not None else self.model.W0.copy()
        record = TrajectoryRecord(
            t=series.array("t"),
            s=series.array("s"),
            y=series.array("y", (0, self.n)),
            dy=series.array("dy", (0, self.n)),
            ddy=series.array("ddy", (0, self.n)),
            ref=series.array("ref", (0, self.n)),
            u=series.array("u", (0, self.n)),
            coupling_norm=series.array("coupling_norm"),
            force_norm=series.array("force_norm"),
            goal=series.array("goal", (0, self.n)),
            latency_ms=series.array("latency"),
            residuals={k: np.asarray(v) for k, v in residual_series.items()},
            surface_values={k: np.asarray(v) for k, v in surface_series.items()},
            repulsive_norm=series.array("repulsive_norm"),
            via_errors=via_errors,
            W_final=W_final,
            quaternions=series.array("quaternion", (0, 4)) if self.orientation else None,
            debug_records=st.debug_records if st is not None else [],
            adaptation=st,
        )
        logger.debug(f"Rollout finished: {steps + 1} ticks, final s={phase.s:.4f}")
        return record

    @staticmethod
    def _coupling_sum(couplings: List[CouplingTerm], t: float, state: ExecutionState, ref: StateTriplet) -> np.ndarray:
        u = np.zeros_like(state.y)
        for term in couplings:
            u = u + term.coupling(t, state, ref)
        return u

    def _check_via_passes(self, vias: Dict[str, ViaPoint], errors: Dict[str, float],
                          s_prev: float, s_now: float, y_prev: np.ndarray, y_now: np.ndarray):
        """Executed position at the via phase, interpolated between ticks"""
        for via_id, via in list(vias.items()):
            crossed = s_prev <= via.phase <= s_now if self.forward else s_now <= via.phase <= s_prev
            if not crossed:
                continue
            span = s_now - s_prev
            weight = 1.0 if span == 0.0 else (via.phase - s_prev) / span
            y_at = y_prev + weight * (y_now - y_prev)
            errors[via_id] = float(np.linalg.norm(y_at - via.point))
            del vias[via_id]


def run_rollout(
    model: DmpModel,
    config: RolloutConfig,
    targets=None,
    via_schedule: Optional[List[ViaPointEvent]] = None,
    couplings: Optional[List[CouplingTerm]] = None,
) -> TrajectoryRecord:
    return DmpExecutor(model, config).run(targets, via_schedule, couplings)
