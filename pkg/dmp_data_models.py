"""
Scenario, epsilon profile, metrics và runtime settings cho DMP++ simulator
"""
import logging
import os
from enum import Enum
from typing import List, Optional, Dict, Any, Literal

from pydantic import BaseModel, Field, field_validator, model_validator

logger = logging.getLogger(__name__)


class Generalization(str, Enum):
    """How the primitive is generalized to new start/goal"""
    DMPP = "dmpp"
    CLASSICAL = "classical"
    CLASSICAL_GOAL_FILTER = "classical+goal_filter"


class HistoryMode(str, Enum):
    """Source of the per-step state constraint"""
    PRESERVE_LEARNED = "preserve_learned"
    ADAPT_TO_EXTERNAL = "adapt_to_external"


class Direction(str, Enum):
    FORWARD = "forward"
    REVERSE = "reverse"


class OrientationSpace(str, Enum):
    """Integrate orientation on the quaternion or in log space"""
    QUATERNION = "quaternion"
    LOG = "log"


class ViaAction(str, Enum):
    ADD = "add"
    REMOVE = "remove"


class ObstacleShape(str, Enum):
    ELLIPSOID = "ellipsoid"
    PLANE = "plane"


class PulseShape(str, Enum):
    HALF_SINE = "half_sine"
    CONSTANT = "constant"


class DemoGenerator(str, Enum):
    """Bundled synthetic demonstrations"""
    MIN_JERK = "min_jerk"
    SINGLE_HUMP = "single_hump"
    S_CURVE = "s_curve"
    HELIX = "helix"
    SLERP = "slerp"


class EpsilonPreset(str, Enum):
    DEFAULT = "default"
    EXTERNAL = "external"


class EpsilonProfile(BaseModel):
    """Constraint relaxation weights per constraint class"""
    pos: float = Field(1e-9, description="Boundary position")
    vel: float = Field(1e-7, description="Boundary velocity")
    acc: float = Field(1e-7, description="Boundary acceleration")
    via: float = Field(1e-7, description="Via-point position")
    state_pos: float = Field(1e-6, description="Current-state position")
    state_vel: float = Field(1e-6, description="Current-state velocity")
    state_acc: float = Field(1e-4, description="Current-state acceleration")

    @field_validator("*")
    @classmethod
    def _in_range(cls, value: float) -> float:
        if not 1e-12 < value < 1.0:
            raise ValueError(f"epsilon must lie in (1e-12, 1), got {value}")
        return value

    @classmethod
    def external(cls, **overrides) -> "EpsilonProfile":
        """Preset for adapting to noisy external signals (forces, repulsion)"""
        values = {"state_pos": 1e-4, "state_vel": 1e-1, "state_acc": 1e-1}
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_preset(cls, preset: EpsilonPreset) -> "EpsilonProfile":
        return cls.external() if preset == EpsilonPreset.EXTERNAL else cls()

    def boundary(self) -> List[float]:
        return [self.pos, self.vel, self.acc]

    def state(self) -> List[float]:
        return [self.state_pos, self.state_vel, self.state_acc]


# ---------------------------------------------------------------------------
# Scenario schema
# ---------------------------------------------------------------------------

class DemoSource(BaseModel):
    """Demonstration: a bundled generator or a CSV file"""
    generator: Optional[DemoGenerator] = Field(None, description="Synthetic generator name")
    file: Optional[str] = Field(None, description="CSV path, relative to the scenario file")
    params: Dict[str, Any] = Field(default_factory=dict, description="Generator keyword arguments")

    @model_validator(mode="after")
    def _one_source(self):
        if (self.generator is None) == (self.file is None):
            raise ValueError("demo needs exactly one of 'generator' or 'file'")
        return self


class ModelSettings(BaseModel):
    kernels: int = Field(30, ge=2, description="Number of Gaussian kernels K")
    width_factor: float = Field(1.5, gt=0.0, description="Kernel width factor a_h")
    stiffness: float = Field(300.0, gt=0.0, description="Diagonal stiffness")
    damping: Optional[float] = Field(None, gt=0.0, description="Diagonal damping, default 2*sqrt(stiffness)")
    ridge: float = Field(1e-8, gt=0.0, description="Relative ridge on the acceleration precision")


class ViaPointEvent(BaseModel):
    """Via-point add/remove at a given time"""
    id: str = Field(..., description="Stable identifier")
    time: float = Field(0.0, ge=0.0, description="Execution time of the event (s)")
    action: ViaAction = Field(ViaAction.ADD, description="add or remove")
    phase: Optional[float] = Field(None, gt=0.0, le=1.0, description="Via phase; omitted → nearest-footprint heuristic")
    point: Optional[List[float]] = Field(None, description="Via position")
    relative_to_goal: bool = Field(False, description="Point is an offset from the current goal")

    @model_validator(mode="after")
    def _point_for_add(self):
        if self.action == ViaAction.ADD and self.point is None:
            raise ValueError(f"via-point '{self.id}': add needs 'point'")
        return self


class ViaStack(BaseModel):
    """Evenly offset via-points ending at the goal (stacked insertion)"""
    count: int = Field(..., ge=1)
    spacing: float = Field(..., gt=0.0)
    axis: List[float] = Field(..., description="Offset direction")
    time: float = Field(0.0, ge=0.0)
    phase_start: float = Field(0.6, gt=0.0, lt=1.0)
    phase_end: float = Field(0.95, gt=0.0, le=1.0)


class TargetEvent(BaseModel):
    time: float = Field(..., ge=0.0)
    goal: List[float]


class TargetDrift(BaseModel):
    """Linear goal drift (conveyor)"""
    velocity: List[float]
    start: float = Field(0.0, ge=0.0)
    until: float = Field(..., gt=0.0)


class TargetSettings(BaseModel):
    events: List[TargetEvent] = Field(default_factory=list)
    drift: Optional[TargetDrift] = None

    @field_validator("events")
    @classmethod
    def _sorted(cls, events: List[TargetEvent]) -> List[TargetEvent]:
        times = [e.time for e in events]
        if times != sorted(times):
            raise ValueError("target events must have nondecreasing times")
        return events


class ObstacleSpec(BaseModel):
    name: str = Field(..., description="Label used in metrics")
    shape: ObstacleShape
    center: Optional[List[float]] = None
    covariance: Optional[List[List[float]]] = Field(None, description="Ellipsoid shape matrix Σ")
    radii: Optional[List[float]] = Field(None, description="Shortcut for Σ = diag(radii²)")
    normal: Optional[List[float]] = None
    point: Optional[List[float]] = None
    d0: Optional[float] = Field(None, gt=0.0, description="Activation offset, default 0.05 x scene scale")
    k_o: float = Field(1.0, gt=0.0, description="Repulsion gain")

    @model_validator(mode="after")
    def _shape_fields(self):
        if self.shape == ObstacleShape.ELLIPSOID:
            if self.center is None or (self.covariance is None and self.radii is None):
                raise ValueError(f"obstacle '{self.name}': ellipsoid needs center and covariance or radii")
        elif self.normal is None or self.point is None:
            raise ValueError(f"obstacle '{self.name}': plane needs normal and point")
        return self


class ForcePulse(BaseModel):
    start: float = Field(..., ge=0.0)
    duration: float = Field(..., gt=0.0)
    magnitude: List[float] = Field(..., description="Peak force (N) or torque (Nm)")
    shape: PulseShape = PulseShape.HALF_SINE


class ForceSettings(BaseModel):
    pulses: List[ForcePulse] = Field(default_factory=list)
    noise_std: float = Field(0.0, ge=0.0, description="Gaussian noise added while a pulse is active")


class ForceCouplingSettings(BaseModel):
    inertia: Optional[float] = Field(None, gt=0.0, description="Desired inertia, default 5 (position) / 2 (orientation)")
    gate: bool = Field(True, description="Cancel the feed-forward with a = sqrt(min(2|f|, 1))")


class PhaseStoppingSettings(BaseModel):
    enabled: bool = False
    gain: float = Field(1.0, ge=0.0, description="a_d, per N")


class OutputSettings(BaseModel):
    trajectory: bool = True
    metrics: bool = True
    debug: bool = False


class Scenario(BaseModel):
    """Declarative simulation run"""
    schema_version: Literal[1] = Field(..., description="Scenario schema version")
    name: str
    description: str = ""
    demo: DemoSource
    model: ModelSettings = Field(default_factory=ModelSettings)
    generalization: Generalization = Generalization.DMPP
    goal_filter_gain: float = Field(4.0, gt=0.0)
    y0: Optional[List[float]] = Field(None, description="Start override, default demo start")
    goal: Optional[List[float]] = Field(None, description="Initial goal, default demo end")
    duration: Optional[float] = Field(None, gt=0.0, description="T_f override, default demo duration")
    tail: float = Field(1.0, ge=0.0, description="Simulated time after T_f (s)")
    dt: float = Field(0.002, gt=0.0, le=0.05)
    direction: Direction = Direction.FORWARD
    history_mode: HistoryMode = HistoryMode.PRESERVE_LEARNED
    epsilon: Optional[EpsilonProfile] = None
    epsilon_preset: EpsilonPreset = EpsilonPreset.DEFAULT
    via_points: List[ViaPointEvent] = Field(default_factory=list)
    via_stack: Optional[ViaStack] = None
    targets: TargetSettings = Field(default_factory=TargetSettings)
    obstacles: List[ObstacleSpec] = Field(default_factory=list)
    forces: ForceSettings = Field(default_factory=ForceSettings)
    force_coupling: ForceCouplingSettings = Field(default_factory=ForceCouplingSettings)
    phase_stopping: PhaseStoppingSettings = Field(default_factory=PhaseStoppingSettings)
    canonical_gain: float = Field(40.0, gt=0.0, description="d in s'' = d(s'_d - s')")
    state_phase_grid: float = Field(1e-3, gt=0.0, description="Minimum phase advance between state constraints")
    fast_path: bool = Field(False, description="Skip adaptation while nothing changes")
    reverse: bool = Field(False, description="Run a retraction pass seeded with the final weights")
    seed: int = 0
    orientation_space: OrientationSpace = OrientationSpace.QUATERNION
    outputs: OutputSettings = Field(default_factory=OutputSettings)

    def epsilon_profile(self) -> EpsilonProfile:
        return self.epsilon if self.epsilon is not None else EpsilonProfile.from_preset(self.epsilon_preset)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

class RunMetrics(BaseModel):
    """Summary of one rollout"""
    scenario: str
    generalization: Generalization
    pass_name: str = "forward"
    status: str = "success"
    steps: int = 0
    amplitude: float = 0.0
    endpoint_error: float = 0.0
    final_velocity_norm: float = 0.0
    via_errors: Dict[str, float] = Field(default_factory=dict)
    peak_acceleration: float = 0.0
    peak_coupling: float = 0.0
    peak_repulsive_force: float = 0.0
    min_surface_value: Dict[str, float] = Field(default_factory=dict)
    latency_mean_ms: float = 0.0
    latency_p99_ms: float = 0.0
    max_constraint_residual: float = 0.0
    final_goal_residual: Optional[float] = Field(None, description="Goal-position residual on the last tick (DMP++ only)")
    constraint_residuals: Dict[str, float] = Field(default_factory=dict)
    chord_deviation: List[float] = Field(default_factory=list, description="Signed max deviation from the start-goal chord")
    max_excursion: float = 0.0
    hard_invariants_ok: bool = True
    oracle_gap: Optional[float] = Field(None, description="Relative gap to the batch solve (debug runs)")


class RuntimeSettings(BaseModel):
    """Process settings from environment variables"""
    out_dir: str = Field("outputs", description="DMPP_OUT_DIR")
    log_level: str = Field("INFO", description="DMPP_LOG_LEVEL")
    dt: Optional[float] = Field(None, gt=0.0, description="DMPP_DT, overrides scenario dt")
    workers: int = Field(4, ge=1, description="DMPP_WORKERS, concurrent rollouts")


# Global runtime settings instance
runtime_settings: Optional[RuntimeSettings] = None


def get_runtime_settings() -> RuntimeSettings:
    """Get or create runtime settings from the environment"""
    global runtime_settings

    if runtime_settings is None:
        dt = os.getenv("DMPP_DT", "")
        runtime_settings = RuntimeSettings(
            out_dir=os.getenv("DMPP_OUT_DIR", "outputs") or "outputs",
            log_level=(os.getenv("DMPP_LOG_LEVEL", "INFO") or "INFO").upper(),
            dt=float(dt) if dt else None,
            workers=int(os.getenv("DMPP_WORKERS", "4") or 4),
        )
        logger.debug(f"Runtime settings: {runtime_settings.model_dump()}")
    return runtime_settings


def reset_runtime_settings():
    """Drop the cached settings (env changed)"""
    global runtime_settings
    runtime_settings = None
