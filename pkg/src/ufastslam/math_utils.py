"""Angle arithmetic and covariance-repair helpers shared by all filters."""

from __future__ import annotations

import math

import numpy as np

# Relative eigenvalue tolerance below which a covariance counts as PSD.
PSD_REL_TOL = 1e-9


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi], preserving its residue mod 2*pi."""
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a}")
    r = math.fmod(a, 2.0 * math.pi)
    if r > math.pi:
        r -= 2.0 * math.pi
    elif r <= -math.pi:
        r += 2.0 * math.pi
    return r


def wrap_angle_array(a: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle`; result lies in (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    r = np.fmod(a, 2.0 * np.pi)  # (-2*pi, 2*pi), sign of a
    r = np.where(r > np.pi, r - 2.0 * np.pi, r)
    return np.where(r <= -np.pi, r + 2.0 * np.pi, r)


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Exact symmetrization (m + m^T) / 2; works on stacked matrices."""
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def symmetrize_psd(m: np.ndarray) -> np.ndarray:
    """Symmetrize a square matrix and clamp tiny negative eigenvalues to zero.

    Eigenvalues in ``[-PSD_REL_TOL * trace, 0)`` are numerical noise (the
    unscented transform can produce them when the center covariance weight
    is negative) and get clamped; anything more negative is a genuine
    failure and raises :class:`~ufastslam.types.NumericalError`.

    Accepts stacked matrices ``(..., d, d)``.
    """
    from ufastslam.types import NumericalError

    m = np.asarray(m, dtype=float)
    if m.shape[-1] != m.shape[-2]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    sym = symmetrize(m)
    eigs, vecs = np.linalg.eigh(sym)
    trace = np.trace(sym, axis1=-2, axis2=-1)
    floor = -PSD_REL_TOL * np.maximum(trace, 0.0)
    if np.any(eigs < floor[..., None]):
        worst = float(np.min(eigs))
        raise NumericalError(f"matrix indefinite beyond repair: eigenvalue {worst}")
    if np.all(eigs >= 0.0):
        return sym
    clamped = np.maximum(eigs, 0.0)
    out = (vecs * clamped[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return symmetrize(out)


def psd_sqrt_lower(m: np.ndarray) -> np.ndarray:
    """Lower-triangular square root L of a PSD matrix, so L @ L.T = m.

    Plain Cholesky with a doubling diagonal jitter (1e-12 to 1e-6 of the
    trace) as fallback for semidefinite inputs; the all-zero matrix maps
    to zero. Raises :class:`~ufastslam.types.NumericalError` when no
    jitter level factorizes.
    """
    from ufastslam.types import NumericalError

    m = np.asarray(m, dtype=float)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    if not m.any():
        return np.zeros_like(m)
    d = m.shape[-1]
    trace = float(np.trace(m))
    eye = np.eye(d)
    jitter = 1e-12 * trace
    while jitter <= 1e-6 * trace:
        try:
            return np.linalg.cholesky(m + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise NumericalError(f"covariance not factorizable (trace {trace})")


def psd_sqrt_lower_stack(m: np.ndarray) -> np.ndarray:
    """Stacked-matrix :func:`psd_sqrt_lower` with a batched fast path."""
    m = np.asarray(m, dtype=float)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    flat = m.reshape(-1, m.shape[-2], m.shape[-1])
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        out[i] = psd_sqrt_lower(flat[i])
    return out.reshape(m.shape)


def log_gaussian_density_2d(
    nu: np.ndarray, cov: np.ndarray, on_singular: str = "raise"
) -> np.ndarray:
    """Log of N(nu; 0, cov) for stacked 2-vectors and 2x2 covariances.

    Uses the closed-form 2x2 inverse. A non-positive determinant raises
    :class:`~ufastslam.types.NumericalError`, except that with
    ``on_singular="neutral"`` a singular covariance paired with a
    (numerically) zero residual contributes a neutral log factor of 0 --
    a delta-certain prediction confirmed exactly carries no weight
    information.
    """
    from ufastslam.types import NumericalError

    nu = np.asarray(nu, dtype=float)
    cov = np.asarray(cov, dtype=float)
    a = cov[..., 0, 0]
    b = cov[..., 0, 1]
    c = cov[..., 1, 0]
    d = cov[..., 1, 1]
    det = a * d - b * c
    singular = det <= 0.0
    if np.any(singular):
        residual = np.max(np.abs(nu), axis=-1)
        if on_singular != "neutral" or np.any(residual[singular] > 1e-9):
            raise NumericalError("singular innovation covariance in importance weight")
    safe_det = np.where(singular, 1.0, det)
    n0 = nu[..., 0]
    n1 = nu[..., 1]
    quad = (d * n0 * n0 - (b + c) * n0 * n1 + a * n1 * n1) / safe_det
    logw = -0.5 * (2.0 * np.log(2.0 * np.pi) + np.log(safe_det) + quad)
    return np.where(singular, 0.0, logw)
