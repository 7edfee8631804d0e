"""
DMP Model - demonstration ingestion, least-squares training and
reference trajectory evaluation
"""
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Any, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.interpolate import interp1d

from dmp_basis import BasisModel, new_basis
from dmp_errors import DmpArgumentError, TrainingError
from quaternion_math import IDENTITY, align_hemisphere, quat_log, unit_quaternion

logger = logging.getLogger(__name__)

DEFAULT_STIFFNESS = 300.0
DEFAULT_RIDGE = 1e-8
PRECISION_COND_WARN = 1e12


@dataclass
class StateTriplet:
    """(position, velocity, acceleration) block"""
    y: np.ndarray
    dy: np.ndarray
    ddy: np.ndarray

    def as_matrix(self) -> np.ndarray:
        """Columns [y, dy, ddy], shape (n, 3)"""
        return np.column_stack((self.y, self.dy, self.ddy))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.dy)) and np.all(np.isfinite(self.ddy)))

    @classmethod
    def at_rest(cls, y: np.ndarray) -> "StateTriplet":
        y = np.asarray(y, dtype=float).copy()
        return cls(y, np.zeros_like(y), np.zeros_like(y))


@dataclass
class Demonstration:
    """Demonstrated trajectory t_j, y_{d,j}; positions shape (n, m)"""
    timestamps: np.ndarray
    positions: np.ndarray
    kind: str = "position"
    quaternions: Optional[np.ndarray] = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[1] != self.timestamps.size:
            raise DmpArgumentError(
                f"positions must be (n, m) with m={self.timestamps.size}, got {self.positions.shape}"
            )
        if self.timestamps.size < 2 or np.any(np.diff(self.timestamps) <= 0.0):
            raise DmpArgumentError("timestamps must be strictly increasing with at least 2 samples")

    @property
    def n(self) -> int:
        return int(self.positions.shape[0])

    @property
    def m(self) -> int:
        return int(self.timestamps.size)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    @property
    def phases(self) -> np.ndarray:
        return (self.timestamps - self.timestamps[0]) / self.duration

    @classmethod
    def from_quaternions(cls, timestamps: np.ndarray, quaternions: np.ndarray) -> "Demonstration":
        """Orientation demo (m, 4) → log space with hemisphere continuity"""
        quaternions = np.asarray(quaternions, dtype=float)
        aligned = np.empty_like(quaternions)
        # First sample goes to the w >= 0 hemisphere, the rest follow their predecessor
        previous = IDENTITY
        for j, q in enumerate(quaternions):
            q = align_hemisphere(unit_quaternion(q), previous)
            aligned[j] = q
            previous = q
        etas = np.column_stack([quat_log(q) for q in aligned])
        return cls(timestamps, etas, kind="orientation", quaternions=aligned)


class DmpModel:
    """Trained primitive: basis, weights W0 (K×n), gains and nominal duration"""

    def __init__(
        self,
        basis: BasisModel,
        W0: np.ndarray,
        precision: np.ndarray,
        duration: float,
        stiffness: Optional[np.ndarray] = None,
        damping: Optional[np.ndarray] = None,
        kind: str = "position",
        training_residual: float = 0.0,
    ):
        W0 = np.atleast_2d(np.asarray(W0, dtype=float))
        if W0.shape[0] != basis.K:
            raise DmpArgumentError(f"W0 must have {basis.K} rows, got {W0.shape}")
        if not np.all(np.isfinite(W0)):
            raise DmpArgumentError("W0 must be finite")
        if duration <= 0.0:
            raise DmpArgumentError(f"Duration must be positive, got {duration}")

        self.basis = basis
        self.W0 = W0
        self.W0.setflags(write=False)
        self.n = int(W0.shape[1])
        self.duration = float(duration)
        self.kind = kind
        self.training_residual = float(training_residual)

        self.stiffness = _gain_matrix(stiffness, self.n, DEFAULT_STIFFNESS, "stiffness")
        default_damping = 2.0 * np.sqrt(np.diag(self.stiffness))
        self.damping = _gain_matrix(damping, self.n, default_damping, "damping")

        self.precision = np.asarray(precision, dtype=float)
        self.P0 = covariance_from_precision(self.precision)

    @property
    def K(self) -> int:
        return self.basis.K

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": "dmpp-model",
            "version": 1,
            "kind": self.kind,
            "basis": self.basis.to_dict(),
            "weights": self.W0.tolist(),
            "precision": self.precision.tolist(),
            "stiffness": self.stiffness.tolist(),
            "damping": self.damping.tolist(),
            "duration": self.duration,
            "training_residual": self.training_residual,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DmpModel":
        if data.get("format") != "dmpp-model":
            raise DmpArgumentError("Not a dmpp-model document")
        basis = new_basis(int(data["basis"]["kernels"]), float(data["basis"]["width_factor"]))
        return cls(
            basis=basis,
            W0=np.asarray(data["weights"], dtype=float),
            precision=np.asarray(data["precision"], dtype=float),
            duration=float(data["duration"]),
            stiffness=np.asarray(data["stiffness"], dtype=float),
            damping=np.asarray(data["damping"], dtype=float),
            kind=data.get("kind", "position"),
            training_residual=float(data.get("training_residual", 0.0)),
        )


def _gain_matrix(value, n: int, default, name: str) -> np.ndarray:
    if value is None:
        value = default
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        matrix = float(value) * np.eye(n)
    elif value.ndim == 1:
        matrix = np.diag(np.broadcast_to(value, (n,)))
    else:
        matrix = value
    if matrix.shape != (n, n) or not np.allclose(matrix, matrix.T):
        raise DmpArgumentError(f"{name} must be a symmetric {n}x{n} matrix")
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise DmpArgumentError(f"{name} must be positive definite")
    return matrix


def covariance_from_precision(precision: np.ndarray) -> np.ndarray:
    """P0 = precision⁻¹ via Cholesky, symmetrized"""
    try:
        factor = linalg.cho_factor(precision, lower=True)
    except linalg.LinAlgError as e:
        raise TrainingError(f"Acceleration precision matrix is not positive definite: {e}")
    P0 = linalg.cho_solve(factor, np.eye(precision.shape[0]))
    return 0.5 * (P0 + P0.T)


def _uniform_phase(demo: Demonstration) -> Demonstration:
    """Resample to uniform phase spacing when timestamps are irregular"""
    steps = np.diff(demo.timestamps)
    if np.max(np.abs(steps - steps.mean())) <= 1e-9 * steps.mean():
        return demo
    logger.info(f"Resampling demonstration of {demo.m} samples to uniform phase spacing")
    uniform_t = np.linspace(demo.timestamps[0], demo.timestamps[-1], demo.m)
    kind = "cubic" if demo.m >= 4 else "linear"
    positions = interp1d(demo.timestamps, demo.positions, kind=kind, axis=1)(uniform_t)
    return Demonstration(uniform_t, positions, kind=demo.kind)


def acceleration_precision(basis: BasisModel, phases: np.ndarray, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Σ φ''_j φ''_jᵀ + λI, λ = ridge · trace / K (the bare sum is singular along the constant vector)"""
    ddphi = basis.ddphi_matrix(phases)
    gram = ddphi @ ddphi.T
    lam = ridge * np.trace(gram) / basis.K
    precision = gram + lam * np.eye(basis.K)
    cond = np.linalg.cond(precision)
    if cond > PRECISION_COND_WARN:
        logger.warning(f"Acceleration precision condition number {cond:.3e} exceeds {PRECISION_COND_WARN:.0e}")
    return 0.5 * (precision + precision.T)


def _fit_weights(demo: Demonstration, basis: BasisModel) -> Tuple[np.ndarray, np.ndarray]:
    if demo.m < basis.K:
        raise TrainingError(f"Demonstration has {demo.m} samples, need at least K={basis.K}")
    Phi = basis.phi_matrix(demo.phases)
    rank = np.linalg.matrix_rank(Phi)
    if rank < basis.K:
        coverage = Phi.sum(axis=1)
        weakest = np.argsort(coverage)[: basis.K - rank]
        raise TrainingError(
            f"Basis regressor is rank deficient ({rank}/{basis.K}); "
            f"kernels {sorted(weakest.tolist())} have too little demo coverage"
        )
    W0, _, _, _ = linalg.lstsq(Phi.T, demo.positions.T)
    return W0, Phi


def train_ls(demo: Demonstration, basis: BasisModel, ridge: float = DEFAULT_RIDGE) -> Tuple[np.ndarray, np.ndarray]:
    """W0 = argmin Σ ||y_d,j - Wᵀφ_j||², P0 = (Σ φ''_j φ''_jᵀ + λI)⁻¹"""
    demo = _uniform_phase(demo)
    W0, _ = _fit_weights(demo, basis)
    P0 = covariance_from_precision(acceleration_precision(basis, demo.phases, ridge))
    return W0, P0


def train_model(
    demo: Demonstration,
    basis: BasisModel,
    stiffness=None,
    damping=None,
    ridge: float = DEFAULT_RIDGE,
) -> DmpModel:
    """Train a DmpModel from a demonstration"""
    demo = _uniform_phase(demo)
    W0, Phi = _fit_weights(demo, basis)
    precision = acceleration_precision(basis, demo.phases, ridge)

    residual = float(np.max(np.abs(W0.T @ Phi - demo.positions)))
    amplitude = float(np.max(np.ptp(demo.positions, axis=1)))
    logger.info(
        f"Trained K={basis.K} n={demo.n} on {demo.m} samples: "
        f"max residual {residual:.3e} (amplitude {amplitude:.3e})"
    )
    return DmpModel(
        basis=basis,
        W0=W0,
        precision=precision,
        duration=demo.duration,
        stiffness=stiffness,
        damping=damping,
        kind=demo.kind,
        training_residual=residual,
    )


def evaluate_reference(model: DmpModel, W: np.ndarray, s: float, ds: float, dds: float) -> StateTriplet:
    """y_s = Wᵀφ, ẏ_s = Wᵀφ' ṡ, ÿ_s = Wᵀ(φ'' ṡ² + φ' s̈)"""
    phi, dphi, ddphi = model.basis.phi_derivs(s)
    return StateTriplet(W.T @ phi, (W.T @ dphi) * ds, W.T @ (ddphi * ds * ds + dphi * dds))


def load_demonstration_csv(path: str) -> Demonstration:
    """CSV với header `t,y1..yn` hoặc `t,qw,qx,qy,qz`"""
    path = Path(path)
    if not path.exists():
        raise DmpArgumentError(f"Demonstration file not found: {path}")
    # genfromtxt indexes the first line blindly when names=True
    if not path.read_text(encoding="utf-8").strip():
        raise DmpArgumentError(f"Demonstration file is empty: {path}")

    try:
        with warnings.catch_warnings():
            # Header-only input only warns; it is rejected below
            warnings.simplefilter("ignore", UserWarning)
            data = np.genfromtxt(path, delimiter=",", names=True, dtype=float,
                                 case_sensitive="lower", encoding="utf-8")
    except ValueError as e:
        raise DmpArgumentError(f"{path}: {e}")

    header = list(data.dtype.names or ())
    if not header:
        raise DmpArgumentError(f"{path}: missing header row")
    if header[0] != "t":
        raise DmpArgumentError(f"{path}: first column must be 't', got {header[:1]}")
    quaternion = header[1:] == ["qw", "qx", "qy", "qz"]
    if not quaternion and header[1:] != [f"y{i}" for i in range(1, len(header))]:
        raise DmpArgumentError(f"{path}: columns must be t,y1..yn or t,qw,qx,qy,qz, got {','.join(header)}")

    data = np.atleast_1d(data)
    values = np.column_stack([data[name] for name in header])
    if values.shape[0] == 0:
        raise DmpArgumentError(f"{path}: no samples")
    if not np.all(np.isfinite(values)):
        rows = sorted(set(np.flatnonzero(~np.isfinite(values).all(axis=1)).tolist()))
        raise DmpArgumentError(f"{path}: missing or non-numeric values in data rows {rows}")

    if quaternion:
        return Demonstration.from_quaternions(values[:, 0], values[:, 1:])
    return Demonstration(values[:, 0], values[:, 1:].T)


def load_model(path: str) -> DmpModel:
    with open(path, "r", encoding="utf-8") as f:
        return DmpModel.from_dict(json.load(f))
