"""
Scene Environment - barrier-potential obstacles, target schedules and
scripted force profiles that drive the simulations
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from dmp_data_models import ForceSettings, ObstacleShape, ObstacleSpec, PulseShape, TargetSettings
from dmp_dynamics import CouplingTerm, ExecutionState
from dmp_errors import DmpArgumentError, PenetrationError
from dmp_model import StateTriplet

logger = logging.getLogger(__name__)

# Keeps V finite right before a faulted penetration
MAX_BARRIER_LEVEL = 1.0 - 1e-12


@dataclass
class Obstacle:
    """Ellipsoid {c, Σ} or plane {n̂, y₀} with activation offset d0 and gain k_o"""
    name: str
    shape: ObstacleShape
    d0: float
    k_o: float = 1.0
    center: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    point: Optional[np.ndarray] = None
    _inverse: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.shape = ObstacleShape(self.shape)
        if self.d0 <= 0.0 or self.k_o <= 0.0:
            raise DmpArgumentError(f"Obstacle '{self.name}': d0 and k_o must be positive")
        if self.shape == ObstacleShape.ELLIPSOID:
            self.center = np.asarray(self.center, dtype=float).reshape(-1)
            self.covariance = np.asarray(self.covariance, dtype=float)
            n = self.center.size
            if self.covariance.shape != (n, n) or not np.allclose(self.covariance, self.covariance.T):
                raise DmpArgumentError(f"Obstacle '{self.name}': covariance must be a symmetric {n}x{n} matrix")
            try:
                np.linalg.cholesky(self.covariance)
            except np.linalg.LinAlgError:
                raise DmpArgumentError(f"Obstacle '{self.name}': covariance must be positive definite")
            self._inverse = np.linalg.inv(self.covariance)
        else:
            normal = np.asarray(self.normal, dtype=float).reshape(-1)
            norm = np.linalg.norm(normal)
            if norm == 0.0:
                raise DmpArgumentError(f"Obstacle '{self.name}': plane normal must be nonzero")
            self.normal = normal / norm
            self.point = np.asarray(self.point, dtype=float).reshape(-1)

    @classmethod
    def from_spec(cls, spec: ObstacleSpec, scene_scale: float) -> "Obstacle":
        """Build from the scenario entry; d0 defaults to 0.05 x scene scale"""
        d0 = spec.d0 if spec.d0 is not None else 0.05 * scene_scale
        covariance = spec.covariance
        if covariance is None and spec.radii is not None:
            covariance = np.diag(np.asarray(spec.radii, dtype=float) ** 2)
        return cls(
            name=spec.name,
            shape=spec.shape,
            d0=d0,
            k_o=spec.k_o,
            center=spec.center,
            covariance=covariance,
            normal=spec.normal,
            point=spec.point,
        )


def surface_value(ob: Obstacle, y: np.ndarray) -> float:
    """ψ_o: 0 on the surface, positive outside"""
    y = np.asarray(y, dtype=float)
    if ob.shape == ObstacleShape.ELLIPSOID:
        d = y - ob.center
        return float(d @ ob._inverse @ d - 1.0)
    return float(ob.normal @ (y - ob.point))


def surface_gradient(ob: Obstacle, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if ob.shape == ObstacleShape.ELLIPSOID:
        return 2.0 * ob._inverse @ (y - ob.center)
    return ob.normal.copy()


def _barrier_level(ob: Obstacle, psi: float) -> float:
    if psi >= ob.d0:
        return 0.0
    return min((psi - ob.d0) ** 2 / ob.d0 ** 2, MAX_BARRIER_LEVEL)


def barrier_potential(ob: Obstacle, y: np.ndarray) -> float:
    """k_o V_o with V_o = -log(1 - e)"""
    return float(-ob.k_o * np.log1p(-_barrier_level(ob, surface_value(ob, y))))


def repulsive_force(ob: Obstacle, y: np.ndarray) -> np.ndarray:
    """f_rep = -k_o ∂V_o/∂y, zero beyond the activation offset"""
    psi = surface_value(ob, y)
    if psi <= 0.0:
        raise PenetrationError(f"Obstacle '{ob.name}' penetrated (ψ = {psi:.3e})")
    if psi >= ob.d0:
        return np.zeros_like(np.asarray(y, dtype=float))
    e = _barrier_level(ob, psi)
    dV_dpsi = (2.0 * (psi - ob.d0) / ob.d0 ** 2) / (1.0 - e)
    return -ob.k_o * dV_dpsi * surface_gradient(ob, y)


class ObstacleCoupling(CouplingTerm):
    """u = Σ f_rep over the scene; keeps the last per-obstacle ψ and force norm"""

    def __init__(self, obstacles: List[Obstacle]):
        self.obstacles = obstacles
        self.last_surface_values = {ob.name: np.inf for ob in obstacles}
        self.last_force_norm = 0.0

    def coupling(self, t: float, state: ExecutionState, ref: StateTriplet) -> np.ndarray:
        total = np.zeros_like(state.y)
        for ob in self.obstacles:
            self.last_surface_values[ob.name] = surface_value(ob, state.y)
            total += repulsive_force(ob, state.y)
        self.last_force_norm = float(np.linalg.norm(total))
        return total


class TargetSchedule:
    """Piecewise-constant goal events plus an optional linear drift"""

    def __init__(
        self,
        initial_goal: np.ndarray,
        events: Optional[List[Tuple[float, np.ndarray]]] = None,
        drift_velocity: Optional[np.ndarray] = None,
        drift_start: float = 0.0,
        drift_until: float = 0.0,
    ):
        self.initial_goal = np.asarray(initial_goal, dtype=float).reshape(-1)
        self.events = [(float(t), np.asarray(g, dtype=float).reshape(-1)) for t, g in (events or [])]
        times = [t for t, _ in self.events]
        if times != sorted(times):
            raise DmpArgumentError("Target event times must be nondecreasing")
        for _, g in self.events:
            if g.size != self.initial_goal.size:
                raise DmpArgumentError(f"Target goal must have {self.initial_goal.size} entries")
        self.drift_velocity = None if drift_velocity is None else np.asarray(drift_velocity, dtype=float).reshape(-1)
        self.drift_start = float(drift_start)
        self.drift_until = float(drift_until)

    @classmethod
    def from_settings(cls, initial_goal: np.ndarray, settings: TargetSettings) -> "TargetSchedule":
        drift = settings.drift
        return cls(
            initial_goal,
            [(e.time, e.goal) for e in settings.events],
            drift_velocity=None if drift is None else drift.velocity,
            drift_start=0.0 if drift is None else drift.start,
            drift_until=0.0 if drift is None else drift.until,
        )

    def goal(self, t: float) -> np.ndarray:
        goal = self.initial_goal.copy()
        for event_time, event_goal in self.events:
            if event_time > t:
                break
            goal = event_goal.copy()
        if self.drift_velocity is not None and t > self.drift_start:
            goal = goal + self.drift_velocity * (min(t, self.drift_until) - self.drift_start)
        return goal


def schedule_goal(ts: TargetSchedule, t: float) -> np.ndarray:
    return ts.goal(t)


class ForceScript:
    """Scripted external force pulses with seeded measurement noise"""

    def __init__(self, settings: ForceSettings, n: int, seed: int = 0):
        self.settings = settings
        self.n = n
        self.seed = seed
        for pulse in settings.pulses:
            if len(pulse.magnitude) != n:
                raise DmpArgumentError(f"Force pulse magnitude must have {n} entries")

    def force(self, t: float) -> np.ndarray:
        total = np.zeros(self.n)
        active = False
        for pulse in self.settings.pulses:
            local = t - pulse.start
            if not 0.0 <= local <= pulse.duration:
                continue
            active = True
            level = 1.0 if pulse.shape == PulseShape.CONSTANT else np.sin(np.pi * local / pulse.duration)
            total += level * np.asarray(pulse.magnitude, dtype=float)
        if active and self.settings.noise_std > 0.0:
            # Keyed on the microsecond tick so noise does not depend on call order
            rng = np.random.default_rng([self.seed, int(round(t * 1e6))])
            total += rng.normal(0.0, self.settings.noise_std, self.n)
        return total
