"""
Classical DMP generalization: spatial scaling of the demonstrated shape
and first-order goal filtering
"""
import logging

import numpy as np

from dmp_errors import DmpArgumentError, ScalingSingularityError
from dmp_model import DmpModel, StateTriplet

logger = logging.getLogger(__name__)


def scaling_matrix(model: DmpModel, y0: np.ndarray, g: np.ndarray) -> np.ndarray:
    """K_s = diag((g - y0) / (f_p(1) - f_p(0))), f_p(s) = W0ᵀφ(s)"""
    demo_displacement = model.W0.T @ (model.basis.phi(1.0) - model.basis.phi(0.0))
    # Fitted endpoints are only known up to the training residual
    tolerance = max(1e-12, 2.0 * model.training_residual)
    zero = np.abs(demo_displacement) <= tolerance
    if np.any(zero):
        raise ScalingSingularityError(
            f"Demonstrated displacement is zero for DoF {np.flatnonzero(zero).tolist()}; "
            "classical spatial scaling is undefined"
        )
    ratio = (np.asarray(g, dtype=float) - np.asarray(y0, dtype=float)) / demo_displacement
    return np.diag(ratio)


def classical_reference(model: DmpModel, y0: np.ndarray, g: np.ndarray, s: float, ds: float, dds: float) -> StateTriplet:
    """y_s = K_s (f_p(s) - f_p(0)) + y0, derivatives scaled by the same constant K_s

    y0 is the position at phase 0 and g the one at phase 1, whichever way the
    phase runs.
    """
    K_s = scaling_matrix(model, y0, g)
    phi, dphi, ddphi = model.basis.phi_derivs(s)
    f_p = model.W0.T @ phi
    f_p0 = model.W0.T @ model.basis.phi(0.0)
    y = K_s @ (f_p - f_p0) + np.asarray(y0, dtype=float)
    dy = K_s @ (model.W0.T @ dphi) * ds
    ddy = K_s @ (model.W0.T @ (ddphi * ds * ds + dphi * dds))
    return StateTriplet(y, dy, ddy)


def goal_filter_step(g: np.ndarray, g_new: np.ndarray, a_g: float, dt: float) -> np.ndarray:
    """Forward Euler of ġ = a_g (g_new - g)"""
    if a_g <= 0.0:
        raise DmpArgumentError(f"Goal filter gain must be positive, got {a_g}")
    g = np.asarray(g, dtype=float)
    return g + a_g * (np.asarray(g_new, dtype=float) - g) * dt
