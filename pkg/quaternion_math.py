"""
Unit quaternion algebra and the quaternion-logarithm kinematic maps

Quaternions are numpy arrays [w, x, y, z] (scalar first, Hamilton product).
Angular velocities are expressed in the world frame: dQ/dt = 0.5 * ω * Q.
"""
import logging
from typing import Tuple

import numpy as np

from dmp_errors import DmpArgumentError

logger = logging.getLogger(__name__)

SMALL_ANGLE = 1e-7
# Below this half angle the closed forms lose digits; series expansions are used
SERIES_ANGLE = 1e-3
# J†_η is singular at θ₂ = π
MAX_HALF_ANGLE = np.pi - 1e-6

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def unit_quaternion(q) -> np.ndarray:
    """Build a unit quaternion (renormalized)"""
    q = np.asarray(q, dtype=float).reshape(4)
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm == 0.0:
        raise DmpArgumentError(f"Cannot normalize quaternion {q}")
    return q / norm


def quat_conj(Q: np.ndarray) -> np.ndarray:
    return np.array([Q[0], -Q[1], -Q[2], -Q[3]])


def quat_mul(Q1: np.ndarray, Q2: np.ndarray) -> np.ndarray:
    """Hamilton product Q1 * Q2, renormalized"""
    w1, v1 = Q1[0], np.asarray(Q1[1:])
    w2, v2 = Q2[0], np.asarray(Q2[1:])
    w = w1 * w2 - v1 @ v2
    v = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    return unit_quaternion(np.concatenate(([w], v)))


def quat_log(Q: np.ndarray) -> np.ndarray:
    """η = 2 acos(w) v/||v||; zero vector when |w| = 1"""
    w = float(np.clip(Q[0], -1.0, 1.0))
    v = np.asarray(Q[1:], dtype=float)
    v_norm = np.linalg.norm(v)
    if abs(w) >= 1.0 or v_norm == 0.0:
        return np.zeros(3)
    # atan2 keeps precision near w = ±1 where acos does not
    return 2.0 * np.arctan2(v_norm, w) * v / v_norm


def quat_exp(eta: np.ndarray) -> np.ndarray:
    """Q = [cos(||η||/2), sin(||η||/2) η/||η||]; identity for η = 0"""
    eta = np.asarray(eta, dtype=float).reshape(3)
    theta = np.linalg.norm(eta)
    if theta == 0.0:
        return IDENTITY.copy()
    half = 0.5 * theta
    return np.concatenate(([np.cos(half)], np.sin(half) * eta / theta))


def align_hemisphere(Q: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Flip the sign of Q so that dot(Q, reference) >= 0"""
    return -Q if float(np.dot(Q, reference)) < 0.0 else Q


def skew(k: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -k[2], k[1]],
        [k[2], 0.0, -k[0]],
        [-k[1], k[0], 0.0],
    ])


def _half_angle_axis(Q: np.ndarray) -> Tuple[float, np.ndarray]:
    eta = quat_log(Q)
    theta = np.linalg.norm(eta)
    if theta < SMALL_ANGLE:
        return 0.0, np.zeros(3)
    half = 0.5 * theta
    if half > MAX_HALF_ANGLE:
        logger.warning(f"Quaternion half angle {half:.6f} clamped to {MAX_HALF_ANGLE:.6f}")
        half = MAX_HALF_ANGLE
    return half, eta / theta


def _coefficients(half: float) -> Tuple[float, float, float, float, float, float]:
    """a = s c/θ₂, b = s²/θ₂, α = θ₂ c/s and their θ₂ derivatives"""
    if half < SERIES_ANGLE:
        h2 = half * half
        a = 1.0 - 2.0 * h2 / 3.0 + 2.0 * h2 * h2 / 15.0
        da = -4.0 * half / 3.0 + 8.0 * half * h2 / 15.0
        b = half - half * h2 / 3.0 + 2.0 * half * h2 * h2 / 45.0
        db = 1.0 - h2 + 2.0 * h2 * h2 / 9.0
        alpha = 1.0 - h2 / 3.0 - h2 * h2 / 45.0
        dalpha = -2.0 * half / 3.0 - 4.0 * half * h2 / 45.0
        return a, da, b, db, alpha, dalpha

    s, c = np.sin(half), np.cos(half)
    a = s * c / half
    da = (1.0 - 2.0 * s * s) / half - s * c / half ** 2
    b = s * s / half
    db = 2.0 * s * c / half - s * s / half ** 2
    alpha = half * c / s
    dalpha = (s * c - half) / (s * s)
    return a, da, b, db, alpha, dalpha


def jacobian_eta(Q: np.ndarray) -> np.ndarray:
    """J_η with ω = J_η η̇"""
    half, k = _half_angle_axis(Q)
    if half == 0.0:
        return np.eye(3)
    a, _, b, _, _, _ = _coefficients(half)
    kk = np.outer(k, k)
    return kk + a * (np.eye(3) - kk) + b * skew(k)


def jacobian_eta_dagger(Q: np.ndarray) -> np.ndarray:
    """J†_η with η̇ = J†_η ω"""
    half, k = _half_angle_axis(Q)
    if half == 0.0:
        return np.eye(3)
    _, _, _, _, alpha, _ = _coefficients(half)
    kk = np.outer(k, k)
    return kk + alpha * (np.eye(3) - kk) - half * skew(k)


def _rates(half: float, k: np.ndarray, deta: np.ndarray) -> Tuple[float, np.ndarray]:
    dhalf = 0.5 * float(k @ deta)
    dk = (np.eye(3) - np.outer(k, k)) @ deta / (2.0 * half)
    return dhalf, dk


def jacobian_eta_dot(Q: np.ndarray, deta: np.ndarray) -> np.ndarray:
    """Time derivative of J_η along η̇"""
    deta = np.asarray(deta, dtype=float).reshape(3)
    half, k = _half_angle_axis(Q)
    if half == 0.0:
        # J_η = I + ½[η]× + O(|η|²) since b ≈ θ/2, so J̇_η → ½[η̇]× at η = 0
        return 0.5 * skew(deta)
    a, da, b, db, _, _ = _coefficients(half)
    dhalf, dk = _rates(half, k, deta)
    kk = np.outer(k, k)
    sym = np.outer(dk, k) + np.outer(k, dk)
    return (1.0 - a) * sym + b * skew(dk) + da * dhalf * (np.eye(3) - kk) + db * dhalf * skew(k)


def jacobian_eta_dagger_dot(Q: np.ndarray, deta: np.ndarray) -> np.ndarray:
    """Time derivative of J†_η along η̇"""
    deta = np.asarray(deta, dtype=float).reshape(3)
    half, k = _half_angle_axis(Q)
    if half == 0.0:
        # J†_η = I - ½[η]× + O(|η|²), so J̇†_η → -½[η̇]× at η = 0
        return -0.5 * skew(deta)
    _, _, _, _, alpha, dalpha = _coefficients(half)
    dhalf, dk = _rates(half, k, deta)
    kk = np.outer(k, k)
    sym = np.outer(dk, k) + np.outer(k, dk)
    return (1.0 - alpha) * sym - dhalf * skew(k) - half * skew(dk) + dalpha * dhalf * (np.eye(3) - kk)


def omega_from_eta(Q: np.ndarray, deta: np.ndarray, ddeta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(ω, ω̇) from the log-space velocity and acceleration"""
    J = jacobian_eta(Q)
    omega = J @ deta
    domega = J @ ddeta + jacobian_eta_dot(Q, deta) @ deta
    return omega, domega


def eta_from_omega(Q: np.ndarray, omega: np.ndarray, domega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(η̇, η̈) from the rotational velocity and acceleration"""
    J_dagger = jacobian_eta_dagger(Q)
    deta = J_dagger @ omega
    ddeta = J_dagger @ domega + jacobian_eta_dagger_dot(Q, deta) @ omega
    return deta, ddeta


def torque_to_log(Q: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """τ_η = J_ηᵀ τ"""
    return jacobian_eta(Q).T @ np.asarray(tau, dtype=float)


def torque_from_log(Q: np.ndarray, tau_eta: np.ndarray) -> np.ndarray:
    """τ = (J†_η)ᵀ τ_η"""
    return jacobian_eta_dagger(Q).T @ np.asarray(tau_eta, dtype=float)


def torque_maps(Q: np.ndarray, torque: np.ndarray, to_log: bool = True) -> np.ndarray:
    """Map a torque into (to_log=True) or out of the log space, preserving power"""
    return torque_to_log(Q, torque) if to_log else torque_from_log(Q, torque)


def geodesic_distance(Q1: np.ndarray, Q2: np.ndarray) -> float:
    """Rotation angle between two orientations (rad)"""
    return float(np.linalg.norm(quat_log(align_hemisphere(quat_mul(Q1, quat_conj(Q2)), IDENTITY))))
