"""
DMP Adaptation - online constrained weight adaptation

The weights solve
    min  Σ_j ||(W - W_init)ᵀ φ''_j||²  +  Σ_c (1/ε_c) ||Wᵀ H_c - Z_c||²
over boundary, via-point and past-state constraints. Each step removes the
constraints that no longer hold (downdate, negative weight) and adds the new
ones (update, positive weight), which keeps the cost O(K²) per step.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Dict, Any, Tuple

import numpy as np
from scipy import linalg

from dmp_data_models import Direction, EpsilonProfile, HistoryMode
from dmp_errors import ConditioningError, DmpArgumentError, DowndateError, OracleError
from dmp_model import DmpModel, StateTriplet

logger = logging.getLogger(__name__)

GAIN_COND_WARN = 1e10
VIA_PHASE_SAMPLES = 80
# State constraints this many kernel spacings from the goal phase are released once the phase saturates
TERMINAL_WINDOW_KERNELS = 4


@dataclass
class ConstraintBlock:
    """Z (n×l) values, H (K×l) regressors, R (l,) signed diagonal weights"""
    Z: np.ndarray
    H: np.ndarray
    R: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.Z = np.asarray(self.Z, dtype=float).reshape(-1, self.H.shape[1])
        self.R = np.asarray(self.R, dtype=float).reshape(-1)
        if self.R.size != self.H.shape[1]:
            raise DmpArgumentError(f"R has {self.R.size} entries for {self.H.shape[1]} constraint columns")
        if np.any(self.R == 0.0):
            raise DmpArgumentError("R must have no zero entries")

    @property
    def width(self) -> int:
        return int(self.H.shape[1])

    @classmethod
    def empty(cls, K: int, n: int) -> "ConstraintBlock":
        return cls(np.zeros((n, 0)), np.zeros((K, 0)), np.zeros(0))

    @classmethod
    def stack(cls, blocks: List["ConstraintBlock"], label: str = "") -> "ConstraintBlock":
        return cls(
            np.hstack([b.Z for b in blocks]),
            np.hstack([b.H for b in blocks]),
            np.concatenate([b.R for b in blocks]),
            label=label or "+".join(b.label for b in blocks if b.label),
        )

    def negated(self) -> "ConstraintBlock":
        return ConstraintBlock(self.Z, self.H, -self.R, label=self.label)


@dataclass
class ViaPoint:
    id: str
    phase: float
    point: np.ndarray

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(-1)
        if not 0.0 < self.phase <= 1.0:
            raise DmpArgumentError(f"Via-point '{self.id}' phase must be in (0, 1], got {self.phase}")


@dataclass
class ViaEvents:
    added: List[ViaPoint] = field(default_factory=list)
    removed: List[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.added or self.removed)


@dataclass
class PhasePair:
    """Current phase (s, ṡ) and the previous tick's (s, ṡ, s̈)"""
    s: float
    ds: float
    s_prev: float
    ds_prev: float
    dds_prev: float


@dataclass(eq=False)
class StateConstraintRecord:
    H: np.ndarray
    Y: np.ndarray
    eps: np.ndarray
    phase: Optional[float] = None


class AdaptationState:
    """Recursive optimizer state: W, P, goal, active via-points"""

    def __init__(
        self,
        model: DmpModel,
        W: np.ndarray,
        P: np.ndarray,
        eps: EpsilonProfile,
        history_mode: HistoryMode,
        direction: Direction,
        state_phase_grid: float = 1e-3,
        record_history: bool = False,
        debug: bool = False,
        fast_path: bool = False,
    ):
        self.model = model
        self.W = np.array(W, dtype=float)
        self.P = np.array(P, dtype=float)
        self.W_init = self.W.copy()
        self.eps = eps
        self.history_mode = HistoryMode(history_mode)
        self.direction = Direction(direction)
        self.state_phase_grid = float(state_phase_grid)
        self.record_history = record_history
        self.debug = debug
        self.fast_path = fast_path

        self.start_phase = 0.0 if self.direction == Direction.FORWARD else 1.0
        self.goal_phase = 1.0 - self.start_phase
        self.A_start = model.basis.block_A(self.start_phase)
        self.A_goal = model.basis.block_A(self.goal_phase)

        self.y0: Optional[np.ndarray] = None
        self.goal: Optional[StateTriplet] = None
        self.via_points: Dict[str, ViaPoint] = {}
        self.i = 0

        # ∂W/∂Z for the goal block: P H R⁻¹
        self._goal_sensitivity: Optional[np.ndarray] = None

        self._last_state_phase: Optional[float] = None
        self._last_state: Optional[StateConstraintRecord] = None
        self.state_history: List[StateConstraintRecord] = []
        # Recorded state constraints inside the terminal window, oldest first
        self.terminal_window = TERMINAL_WINDOW_KERNELS / (model.K - 1)
        self._terminal_records: List[StateConstraintRecord] = []
        self.debug_records: List[Dict[str, Any]] = []
        self._cond_warned = False

    @property
    def K(self) -> int:
        return self.model.K

    @property
    def n(self) -> int:
        return self.model.n

    # ------------------------------------------------------------------
    # Rank-l update / downdate
    # ------------------------------------------------------------------

    def _gain(self, block: ConstraintBlock, negative: bool) -> Tuple[np.ndarray, np.ndarray]:
        PH = self.P @ block.H
        S = np.diag(block.R) + block.H.T @ PH
        S = 0.5 * (S + S.T)
        try:
            factor = linalg.cho_factor(-S if negative else S, lower=True, check_finite=False)
        except linalg.LinAlgError:
            if negative:
                raise DowndateError(
                    f"Downdate gain for '{block.label}' is not negative definite; "
                    "the constraint was not applied with the same epsilon"
                )
            raise ConditioningError(
                f"Update gain for '{block.label}' is singular; increase the constraint epsilon"
            )
        self._check_conditioning(np.diag(factor[0]), block.label)
        gain = linalg.cho_solve(factor, PH.T, check_finite=False).T
        return (-gain if negative else gain), PH

    def _check_conditioning(self, chol_diag: np.ndarray, label: str):
        cond = (np.max(np.abs(chol_diag)) / np.min(np.abs(chol_diag))) ** 2
        if cond > GAIN_COND_WARN:
            message = f"Gain matrix for '{label}' has condition estimate {cond:.2e}"
            if not self._cond_warned:
                logger.warning(message)
                self._cond_warned = True
            else:
                logger.debug(message)

    def _apply(self, block: ConstraintBlock, negative: bool) -> np.ndarray:
        gain, PH = self._gain(block, negative)
        innovation = block.Z - self.W.T @ block.H
        self.W += gain @ innovation.T
        self.P -= gain @ PH.T
        self.P = 0.5 * (self.P + self.P.T)

        if self._goal_sensitivity is not None:
            self._goal_sensitivity -= gain @ (block.H.T @ self._goal_sensitivity)
        return gain

    def update(self, added: ConstraintBlock) -> "AdaptationState":
        """K = P H (R + HᵀPH)⁻¹; W += K (Z - WᵀH)ᵀ; P -= K HᵀP"""
        if added.width == 0:
            return self
        if np.any(added.R <= 0.0):
            raise DmpArgumentError("Update weights must be positive")
        self._apply(added, negative=False)
        return self

    def downdate(self, removed: ConstraintBlock) -> "AdaptationState":
        """Same recursion with R = -ε; R + HᵀPH must be negative definite"""
        if removed.width == 0:
            return self
        block = removed if np.all(removed.R < 0.0) else removed.negated()
        if np.any(block.R >= 0.0):
            raise DmpArgumentError("Downdate weights must all share one sign")
        self._apply(block, negative=True)
        return self

    # ------------------------------------------------------------------
    # Constraint blocks
    # ------------------------------------------------------------------

    def boundary_block(self, y0: np.ndarray, goal: StateTriplet) -> ConstraintBlock:
        start = StateTriplet.at_rest(y0)
        eps = np.array(self.eps.boundary())
        return ConstraintBlock(
            np.hstack((start.as_matrix(), goal.as_matrix())),
            np.hstack((self.A_start, self.A_goal)),
            np.concatenate((eps, eps)),
            label="boundary",
        )

    def goal_block(self, goal: StateTriplet) -> ConstraintBlock:
        return ConstraintBlock(goal.as_matrix(), self.A_goal, np.array(self.eps.boundary()), label="goal")

    def via_block(self, via: ViaPoint) -> ConstraintBlock:
        phi = self.model.basis.phi(via.phase)
        return ConstraintBlock(via.point.reshape(-1, 1), phi.reshape(-1, 1), [self.eps.via], label=f"via:{via.id}")

    def state_block(self, phase: PhasePair, measured: Optional[StateTriplet]) -> ConstraintBlock:
        H = self.model.basis.state_regressor(phase.s, phase.ds, phase.s_prev, phase.ds_prev, phase.dds_prev)
        if self.history_mode == HistoryMode.PRESERVE_LEARNED or measured is None:
            Y = self.W.T @ H
        else:
            Y = measured.as_matrix()
        return ConstraintBlock(Y, H, np.array(self.eps.state()), label="state")

    # ------------------------------------------------------------------
    # Per-step adaptation
    # ------------------------------------------------------------------

    def retarget_goal(self, goal: StateTriplet):
        """Downdate of the previous goal and update of the new one, in closed form

        Both blocks share H and ε, so P is unchanged and W moves along the
        goal sensitivity P H R⁻¹.
        """
        delta = goal.as_matrix() - self.goal.as_matrix()
        self.W += self._goal_sensitivity @ delta.T
        self.goal = goal

    def release_terminal_constraints(self) -> int:
        """Downdate the state constraints recorded near the goal phase, newest first

        Once the phase rests at its boundary they pin the same reference point
        as the goal block and hold it against later retargets. Returns how many
        records were released.
        """
        released = []
        while self._terminal_records:
            record = self._terminal_records[-1]
            try:
                self.downdate(ConstraintBlock(record.Y, record.H, -record.eps, label="state-release"))
            except DowndateError as e:
                logger.warning(f"⚠️ Terminal state release stopped after {len(released)} records: {e}")
                self._terminal_records.clear()
                break
            released.append(self._terminal_records.pop())
        if not released:
            return 0

        gone = {id(record) for record in released}
        self.state_history = [r for r in self.state_history if id(r) not in gone]
        if self._last_state is not None and id(self._last_state) in gone:
            self._last_state = None
        logger.debug(f"Released {len(released)} terminal state constraints at step {self.i}")
        return len(released)

    def step(
        self,
        phase: PhasePair,
        goal: np.ndarray,
        via_events: Optional[ViaEvents] = None,
        current_state: Optional[StateTriplet] = None,
    ) -> "AdaptationState":
        """One control-cycle adaptation: downdate stale constraints, update new ones"""
        self.i += 1
        goal = np.asarray(goal, dtype=float).reshape(self.n)
        via_events = via_events or ViaEvents()
        goal_changed = not np.array_equal(goal, self.goal.y)

        if self.fast_path and not goal_changed and not via_events and self.history_mode == HistoryMode.PRESERVE_LEARNED:
            self._debug_record(phase.s)
            return self

        # A saturated phase adds no state constraints and frees the endpoint
        saturated = phase.s == self.goal_phase
        if saturated and self._terminal_records:
            self.release_terminal_constraints()

        # Learned-trajectory target is taken before anything moves W
        apply_state = not saturated and (goal_changed or bool(via_events) or (
            self._last_state_phase is None and abs(phase.s - self.start_phase) >= self.state_phase_grid
        ) or (
            self._last_state_phase is not None and abs(phase.s - self._last_state_phase) >= self.state_phase_grid
        ))
        state = self.state_block(phase, current_state) if apply_state else None

        removed = [self.via_points[v] for v in via_events.removed if v in self.via_points]
        for via_id in via_events.removed:
            if via_id not in self.via_points:
                logger.warning(f"Via-point '{via_id}' is not active; removal ignored")
        if removed:
            self.downdate(ConstraintBlock.stack([self.via_block(v) for v in removed], label="via-remove"))
            for via in removed:
                del self.via_points[via.id]

        if goal_changed:
            self.retarget_goal(StateTriplet.at_rest(goal))

        blocks: List[ConstraintBlock] = []
        if state is not None:
            blocks.append(state)
        added = list(via_events.added)
        for via in added:
            if via.id in self.via_points:
                raise DmpArgumentError(f"Via-point '{via.id}' is already active")
        blocks.extend(self.via_block(v) for v in added)
        if blocks:
            block = ConstraintBlock.stack(blocks, label="step")
            self._apply(block, negative=False)
            for via in added:
                self.via_points[via.id] = via

        if state is not None:
            self._last_state_phase = phase.s
            record = StateConstraintRecord(state.H, state.Z, state.R, phase.s)
            self._last_state = record
            if abs(phase.s - self.goal_phase) < self.terminal_window:
                self._terminal_records.append(record)
            if self.record_history:
                self.state_history.append(record)

        self._debug_record(phase.s)
        return self

    # ------------------------------------------------------------------
    # Diagnostics
    # ------------------------------------------------------------------

    def residuals(self) -> Dict[str, float]:
        """Max absolute violation per constraint class"""
        start = np.abs(self.W.T @ self.A_start - StateTriplet.at_rest(self.y0).as_matrix())
        goal = np.abs(self.W.T @ self.A_goal - self.goal.as_matrix())
        result = {
            "start_position": float(start[:, 0].max()),
            "goal_position": float(goal[:, 0].max()),
            "boundary_velocity": float(max(start[:, 1].max(), goal[:, 1].max())),
            "boundary_acceleration": float(max(start[:, 2].max(), goal[:, 2].max())),
            "via": 0.0,
            "state_position": 0.0,
            "state_velocity": 0.0,
        }
        for via in self.via_points.values():
            error = np.abs(self.W.T @ self.model.basis.phi(via.phase) - via.point).max()
            result["via"] = max(result["via"], float(error))
        if self._last_state is not None:
            state = np.abs(self.W.T @ self._last_state.H - self._last_state.Y)
            result["state_position"] = float(state[:, 0].max())
            result["state_velocity"] = float(state[:, 1].max())
        return result

    def _debug_record(self, s: float):
        if not self.debug:
            return
        self.debug_records.append({
            "i": self.i,
            "s": float(s),
            "residuals": self.residuals(),
            "weight_change": float(np.linalg.norm(self.W - self.W_init)),
            "cond_P": float(np.linalg.cond(self.P)),
        })


def init_adaptation(
    model: DmpModel,
    y0: np.ndarray,
    g0: np.ndarray,
    eps: Optional[EpsilonProfile] = None,
    history_mode: HistoryMode = HistoryMode.PRESERVE_LEARNED,
    direction: Direction = Direction.FORWARD,
    W_init: Optional[np.ndarray] = None,
    **options,
) -> AdaptationState:
    """Start from (W_init or W0, P0) and apply the boundary block [A(start) A(goal)]"""
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    g0 = np.asarray(g0, dtype=float).reshape(-1)
    if y0.size != model.n or g0.size != model.n:
        raise DmpArgumentError(f"y0 and g0 must have {model.n} entries")
    if not (np.all(np.isfinite(y0)) and np.all(np.isfinite(g0))):
        raise DmpArgumentError("y0 and g0 must be finite")

    W = model.W0 if W_init is None else np.asarray(W_init, dtype=float)
    if W.shape != model.W0.shape:
        raise DmpArgumentError(f"W_init must have shape {model.W0.shape}, got {W.shape}")

    st = AdaptationState(model, W, model.P0, eps or EpsilonProfile(), history_mode, direction, **options)
    st.y0 = y0
    st.goal = StateTriplet.at_rest(g0)
    gain = st._apply(st.boundary_block(y0, st.goal), negative=False)
    st._goal_sensitivity = gain[:, 3:6].copy()

    residuals = st.residuals()
    scale = max(1.0, float(np.max(np.abs(np.concatenate((y0, g0))))))
    worst = max(residuals["start_position"], residuals["goal_position"])
    if worst > 1e-4 * scale:
        logger.warning(f"Boundary residual {worst:.2e} exceeds 1e-4 after initialization")
    return st


def update(st: AdaptationState, added: ConstraintBlock) -> AdaptationState:
    return st.update(added)


def downdate(st: AdaptationState, removed: ConstraintBlock) -> AdaptationState:
    return st.downdate(removed)


def step(
    st: AdaptationState,
    phase: PhasePair,
    goal: np.ndarray,
    via_events: Optional[ViaEvents] = None,
    current_state: Optional[StateTriplet] = None,
) -> AdaptationState:
    return st.step(phase, goal, via_events, current_state)


def via_phase_heuristic(model: DmpModel, st: AdaptationState, y_v: np.ndarray, s_now: float) -> float:
    """Phase of the sampled reference point closest to y_v, ahead of s_now"""
    forward = st.direction == Direction.FORWARD
    end = 1.0 if forward else 0.0
    if s_now == end:
        raise DmpArgumentError(f"No phase left ahead of s={s_now}")
    grid = np.linspace(s_now, end, VIA_PHASE_SAMPLES + 1)[1:]
    # Via phases live in (0, 1]
    grid = grid[grid > 0.0]
    path = st.W.T @ model.basis.phi_matrix(grid)
    distances = np.linalg.norm(path - np.asarray(y_v, dtype=float).reshape(-1, 1), axis=0)
    return float(grid[int(np.argmin(distances))])


def oracle_blocks(
    model: DmpModel,
    boundary: Tuple[StateTriplet, StateTriplet],
    history: List[StateConstraintRecord],
    vias: List[ViaPoint],
    eps: EpsilonProfile,
    direction: Direction,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    start_phase = 0.0 if Direction(direction) == Direction.FORWARD else 1.0
    start, goal = boundary
    boundary_eps = np.array(eps.boundary())
    H = [model.basis.block_A(start_phase), model.basis.block_A(1.0 - start_phase)]
    Z = [start.as_matrix(), goal.as_matrix()]
    R = [boundary_eps, boundary_eps]
    for via in vias:
        H.append(model.basis.phi(via.phase).reshape(-1, 1))
        Z.append(via.point.reshape(-1, 1))
        R.append(np.array([eps.via]))
    for record in history:
        H.append(record.H)
        Z.append(record.Y)
        R.append(record.eps)
    return np.hstack(H), np.hstack(Z), np.concatenate(R)


def batch_solve(
    model: DmpModel,
    boundary: Tuple[StateTriplet, StateTriplet],
    history: List[StateConstraintRecord],
    vias: List[ViaPoint],
    eps: EpsilonProfile,
    direction: Direction = Direction.FORWARD,
    W_init: Optional[np.ndarray] = None,
    method: str = "penalized",
) -> np.ndarray:
    """Direct solution of the constrained problem over the whole constraint set

    method: "penalized" (ε-weighted normal equations as one stacked least
    squares), "kkt" (exact equality constraints) or "auto" (kkt, falling back
    to penalized on rank deficiency).
    """
    W_init = model.W0 if W_init is None else np.asarray(W_init, dtype=float)
    H, Z, R = oracle_blocks(model, boundary, history, vias, eps, direction)
    innovation = (Z - W_init.T @ H).T

    if method in ("kkt", "auto"):
        try:
            return _solve_kkt(model, W_init, H, innovation)
        except OracleError as e:
            if method == "kkt":
                raise
            logger.warning(f"Exact KKT oracle unavailable ({e}); using the penalized form")
    elif method != "penalized":
        raise DmpArgumentError(f"Unknown oracle method '{method}'")

    factor = np.linalg.cholesky(model.precision)
    weights = 1.0 / np.sqrt(R)
    A = np.vstack((factor.T, H.T * weights[:, None]))
    b = np.vstack((np.zeros((model.K, model.n)), innovation * weights[:, None]))
    delta, _, _, _ = linalg.lstsq(A, b)
    return W_init + delta


def _solve_kkt(model: DmpModel, W_init: np.ndarray, H: np.ndarray, innovation: np.ndarray) -> np.ndarray:
    """W = W_init + P0 H (HᵀP0H)⁻¹ (Z - W_initᵀH)ᵀ"""
    if H.shape[1] > model.K or np.linalg.matrix_rank(H) < H.shape[1]:
        raise OracleError(f"Stacked constraint matrix ({H.shape[0]}x{H.shape[1]}) lacks full column rank")
    P0H = model.P0 @ H
    gram = H.T @ P0H
    try:
        factor = linalg.cho_factor(0.5 * (gram + gram.T), lower=True)
    except linalg.LinAlgError as e:
        raise OracleError(f"HᵀP0H is not positive definite: {e}")
    return W_init + P0H @ linalg.cho_solve(factor, innovation)


def penalized_cost(model: DmpModel, W: np.ndarray, blocks, W_init: Optional[np.ndarray] = None) -> float:
    """ε-relaxed objective at W for a stacked (H, Z, R) triple"""
    H, Z, R = blocks
    W_init = model.W0 if W_init is None else W_init
    delta = W - W_init
    prior = float(np.trace(delta.T @ model.precision @ delta))
    residual = W.T @ H - Z
    return prior + float(np.sum(residual ** 2 / R[None, :]))
