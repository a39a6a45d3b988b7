"""Scaled unscented transform: weights, sigma points, moment reconstruction.

The same primitives serve the 7-dimensional augmented pose filter and the
2-dimensional landmark filters. Stacked variants (leading batch axis)
back the vectorized per-particle kernels; the scalar API wraps them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ufastslam.math_utils import (
    psd_sqrt_lower_stack,
    symmetrize_psd,
    wrap_angle_array,
)
from ufastslam.types import Gaussian


@dataclass(frozen=True, slots=True)
class UtParams:
    """Scaled-UT spread parameters.

    Defaults (alpha=1, kappa=0, beta=2) give lambda = 0 for every
    dimension: all weights nonnegative, so reconstructed covariances stay
    PSD even for the 7-dimensional augmented state.
    """

    alpha: float = 1.0
    kappa: float = 0.0
    beta: float = 2.0

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.kappa < 0.0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")

    def lam(self, n: int) -> float:
        """Scaling term lambda = alpha^2 (n + kappa) - n for dimension n."""
        return self.alpha * self.alpha * (n + self.kappa) - n


@dataclass(frozen=True, slots=True)
class SigmaPointSet:
    """2n+1 deterministic points with mean/covariance weight vectors."""

    points: np.ndarray  # (2n+1, d)
    w_m: np.ndarray
    w_c: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        w_m = np.asarray(self.w_m, dtype=float)
        w_c = np.asarray(self.w_c, dtype=float)
        if points.ndim != 2 or points.shape[0] != w_m.shape[0] != w_c.shape[0]:
            raise ValueError("points and weights are inconsistent")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "w_m", w_m)
        object.__setattr__(self, "w_c", w_c)

    def transformed(self, points: np.ndarray) -> "SigmaPointSet":
        """Same weights, new point values (after a nonlinear map)."""
        return SigmaPointSet(points, self.w_m, self.w_c)


def ut_weights(n: int, params: UtParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance weights for a 2n+1 sigma set of dimension n."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    lam = params.lam(n)
    if n + lam <= 0.0:
        raise ValueError(f"invalid UT parameterization: n + lambda = {n + lam} <= 0")
    w_m = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    w_c = w_m.copy()
    w_m[0] = lam / (n + lam)
    w_c[0] = lam / (n + lam) + (1.0 - params.alpha**2 + params.beta)
    return w_m, w_c


def sigma_points_stack(means: np.ndarray, covs: np.ndarray, lam: float) -> np.ndarray:
    """Sigma points for a stack of Gaussians: (M, n) x (M, n, n) -> (M, 2n+1, n).

    Point 0 is the mean; points 1..n add sqrt((n+lam) cov) columns, points
    n+1..2n subtract them. The square root is the lower-triangular Cholesky
    factor (with jitter repair), which fixes the column convention.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    m, n = means.shape
    roots = psd_sqrt_lower_stack((n + lam) * covs)  # (M, n, n)
    cols = np.swapaxes(roots, -1, -2)  # row i is column i of the root
    points = np.empty((m, 2 * n + 1, n))
    points[:, 0, :] = means
    points[:, 1 : n + 1, :] = means[:, None, :] + cols
    points[:, n + 1 :, :] = means[:, None, :] - cols
    return points


def ut_mean_stack(
    points: np.ndarray, w_m: np.ndarray, angle_indices: tuple[int, ...] = ()
) -> np.ndarray:
    """Weighted mean of stacked point sets (M, P, d) -> (M, d).

    Angle coordinates are averaged through wrapped residuals about the
    first point so sets straddling +/-pi do not collapse to garbage.
    """
    mean = np.einsum("p,mpd->md", w_m, points)
    for j in angle_indices:
        ref = points[:, 0, j]
        res = np.einsum("p,mp->m", w_m, wrap_angle_array(points[:, :, j] - ref[:, None]))
        mean[:, j] = wrap_angle_array(ref + res)
    return mean


def ut_residuals_stack(
    points: np.ndarray, mean: np.ndarray, angle_indices: tuple[int, ...] = ()
) -> np.ndarray:
    """Point-minus-mean residuals with wrapped angle coordinates."""
    res = points - mean[:, None, :]
    for j in angle_indices:
        res[:, :, j] = wrap_angle_array(res[:, :, j])
    return res


def ut_cov_stack(residuals: np.ndarray, w_c: np.ndarray) -> np.ndarray:
    """Weighted outer-product covariance of residual stacks (M, P, d)."""
    return np.einsum("p,mpi,mpj->mij", w_c, residuals, residuals)


def cross_cov_stack(
    res_a: np.ndarray, res_b: np.ndarray, w_c: np.ndarray
) -> np.ndarray:
    """Weighted cross-covariance of two residual stacks: (M, p, q)."""
    return np.einsum("p,mpi,mpj->mij", w_c, res_a, res_b)


def sigma_points(g: Gaussian, params: UtParams) -> SigmaPointSet:
    """Deterministic 2n+1 sigma set of a Gaussian under the scaled UT."""
    n = g.dim
    w_m, w_c = ut_weights(n, params)
    cov = symmetrize_psd(g.cov)
    points = sigma_points_stack(g.mean[None, :], cov[None, :, :], params.lam(n))[0]
    return SigmaPointSet(points, w_m, w_c)


def reconstruct_gaussian(
    s: SigmaPointSet, angle_indices: tuple[int, ...] = ()
) -> Gaussian:
    """Weighted mean/covariance of a (possibly transformed) sigma set."""
    points = s.points[None, :, :]
    mean = ut_mean_stack(points, s.w_m, angle_indices)
    res = ut_residuals_stack(points, mean, angle_indices)
    cov = symmetrize_psd(ut_cov_stack(res, s.w_c)[0])
    return Gaussian(mean[0], cov)


def cross_covariance(
    a_points: np.ndarray,
    mean_a: np.ndarray,
    b_points: np.ndarray,
    mean_b: np.ndarray,
    w_c: np.ndarray,
    angle_indices_a: tuple[int, ...] = (),
    angle_indices_b: tuple[int, ...] = (),
) -> np.ndarray:
    """Weighted cross-covariance between two transformed point families."""
    a_points = np.asarray(a_points, dtype=float)
    b_points = np.asarray(b_points, dtype=float)
    if a_points.shape[0] != b_points.shape[0]:
        raise ValueError("point families must have equal counts")
    res_a = ut_residuals_stack(a_points[None], np.asarray(mean_a, float)[None], angle_indices_a)
    res_b = ut_residuals_stack(b_points[None], np.asarray(mean_b, float)[None], angle_indices_b)
    return cross_cov_stack(res_a, res_b, np.asarray(w_c, dtype=float))[0]
