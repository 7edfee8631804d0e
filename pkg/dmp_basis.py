"""
Gaussian Basis - normalized radial-basis kernels over the phase variable
and the regressor blocks built from them
"""
import logging
from typing import Tuple

import numpy as np

from dmp_errors import DmpArgumentError

logger = logging.getLogger(__name__)

# Floor for the normalization sum far outside [0, 1]
_SUM_FLOOR = 1e-300


class BasisModel:
    """K normalized Gaussians with analytic phase derivatives"""

    def __init__(self, centers: np.ndarray, inverse_widths: np.ndarray, width_factor: float):
        centers = np.asarray(centers, dtype=float)
        inverse_widths = np.asarray(inverse_widths, dtype=float)
        if centers.ndim != 1 or centers.size < 2:
            raise DmpArgumentError(f"Basis needs at least 2 kernels, got {centers.size}")
        if centers.shape != inverse_widths.shape:
            raise DmpArgumentError("centers and inverse_widths must have the same length")
        if np.any(np.diff(centers) <= 0.0) or centers[0] != 0.0 or centers[-1] != 1.0:
            raise DmpArgumentError("centers must be strictly increasing from 0 to 1")
        if np.any(inverse_widths <= 0.0):
            raise DmpArgumentError("inverse widths must be positive")

        self.centers = centers
        self.inverse_widths = inverse_widths
        self.width_factor = float(width_factor)
        self.centers.setflags(write=False)
        self.inverse_widths.setflags(write=False)

    @property
    def K(self) -> int:
        return int(self.centers.size)

    def _kernels(self, s: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unnormalized kernels and their phase derivatives (shifted for underflow)"""
        d = s - self.centers
        exponent = self.inverse_widths * d * d
        # Common factor exp(min exponent) cancels in every normalized quantity
        psi = np.exp(-(exponent - exponent.min()))
        dpsi = -2.0 * self.inverse_widths * d * psi
        ddpsi = (4.0 * self.inverse_widths ** 2 * d * d - 2.0 * self.inverse_widths) * psi
        return psi, dpsi, ddpsi

    def phi(self, s: float) -> np.ndarray:
        """Normalized kernel vector φ(s)"""
        psi, _, _ = self._kernels(float(s))
        return psi / max(psi.sum(), _SUM_FLOOR)

    def phi_derivs(self, s: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(φ, ∂φ/∂s, ∂²φ/∂s²) at phase s"""
        psi, dpsi, ddpsi = self._kernels(float(s))
        total = max(psi.sum(), _SUM_FLOOR)
        dtotal = dpsi.sum()
        ddtotal = ddpsi.sum()

        phi = psi / total
        dphi = (dpsi - phi * dtotal) / total
        ddphi = (ddpsi - 2.0 * dphi * dtotal - phi * ddtotal) / total
        return phi, dphi, ddphi

    def block_A(self, s: float) -> np.ndarray:
        """Boundary regressor A(s) = [φ φ' φ''], shape (K, 3)"""
        return np.column_stack(self.phi_derivs(s))

    def block_C(self, s_j: float, s_jm1: float) -> np.ndarray:
        """State regressor with the acceleration column taken at the previous phase"""
        phi, dphi, _ = self.phi_derivs(s_j)
        _, _, ddphi_prev = self.phi_derivs(s_jm1)
        return np.column_stack((phi, dphi, ddphi_prev))

    def state_regressor(self, s_j: float, ds_j: float, s_jm1: float, ds_jm1: float, dds_jm1: float) -> np.ndarray:
        """block_C with columns scaled to time derivatives (velocity by ṡ, acceleration by ṡ², s̈)"""
        phi, dphi, _ = self.phi_derivs(s_j)
        _, dphi_prev, ddphi_prev = self.phi_derivs(s_jm1)
        return np.column_stack((phi, dphi * ds_j, ddphi_prev * ds_jm1 ** 2 + dphi_prev * dds_jm1))

    def phi_matrix(self, phases: np.ndarray) -> np.ndarray:
        """Stack φ(s_j) in columns, shape (K, m)"""
        return np.column_stack([self.phi(s) for s in np.asarray(phases, dtype=float)])

    def ddphi_matrix(self, phases: np.ndarray) -> np.ndarray:
        """Stack ∂²φ/∂s²(s_j) in columns, shape (K, m)"""
        return np.column_stack([self.phi_derivs(s)[2] for s in np.asarray(phases, dtype=float)])

    def to_dict(self) -> dict:
        return {"kernels": self.K, "width_factor": self.width_factor}


def new_basis(K: int, a_h: float) -> BasisModel:
    """Equally spaced centers on [0, 1], h_i = 1 / (a_h (c_{i+1} - c_i))^2"""
    if not isinstance(K, (int, np.integer)) or K < 2:
        raise DmpArgumentError(f"Kernel count must be an integer >= 2, got {K!r}")
    if not np.isfinite(a_h) or a_h <= 0.0:
        raise DmpArgumentError(f"Width factor must be positive, got {a_h!r}")
    if not 1.2 <= a_h <= 1.5:
        logger.debug(f"Width factor {a_h} outside the usual [1.2, 1.5] range")

    centers = np.linspace(0.0, 1.0, int(K))
    spacing = np.diff(centers)
    # Last kernel reuses the final spacing
    spacing = np.append(spacing, spacing[-1])
    inverse_widths = 1.0 / (a_h * spacing) ** 2
    return BasisModel(centers, inverse_widths, a_h)
