"""Shared value types used across the filters, simulator and metrics.

Containers are immutable after construction (frozen dataclasses; numpy
payloads are marked read-only) so they can be copied freely between
threads without locking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ufastslam.math_utils import wrap_angle


class NumericalError(RuntimeError):
    """A matrix factorization or solve failed beyond repair."""


class GeometryError(ValueError):
    """Degenerate geometry (e.g. a landmark coincident with the robot)."""


def _frozen_array(values, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, slots=True)
class Pose2D:
    """Robot pose (x, y, theta) in the world frame.

    ``theta`` is normalized to (-pi, pi] on construction, so every
    operation that returns a ``Pose2D`` preserves the invariant.
    """

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        """Return ``[x, y, theta]`` as a numpy array."""
        return np.array([self.x, self.y, self.theta], dtype=float)

    @classmethod
    def from_array(cls, v) -> "Pose2D":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2])


@dataclass(frozen=True, slots=True)
class ControlInput:
    """Commanded velocities: ``v`` (m/s) and ``w`` (rad/s)."""

    v: float
    w: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.v) and np.isfinite(self.w)):
            raise ValueError("control input must be finite")
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "w", float(self.w))

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.w], dtype=float)


@dataclass(frozen=True, slots=True)
class RangeBearing:
    """Identified observation of a landmark: range ``r`` and bearing ``phi``.

    The identity token comes from the sensor (here: the simulator's known
    data association); ``phi`` is normalized to (-pi, pi].
    """

    landmark_id: int
    r: float
    phi: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.r) or self.r < 0.0:
            raise ValueError(f"range must be finite and >= 0, got {self.r}")
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.phi], dtype=float)


@dataclass(frozen=True, slots=True)
class LandmarkTruth:
    """Ground-truth landmark: identity token plus world position."""

    id: int
    position: tuple[float, float]

    def as_array(self) -> np.ndarray:
        return np.array(self.position, dtype=float)


@dataclass(frozen=True, slots=True)
class Gaussian:
    """Multivariate Gaussian belief with mean vector and covariance matrix."""

    mean: Any
    cov: Any

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(-1)
        d = mean.shape[0]
        cov = _frozen_array(self.cov, (d, d))
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def validate(self, rel_tol: float = 1e-9) -> None:
        """Check the covariance invariant: symmetric and PSD within tolerance.

        Symmetry is relative to the matrix scale; eigenvalues may be
        negative only down to ``-rel_tol * trace``.
        """
        scale = max(float(np.max(np.abs(self.cov))), 1.0)
        if not np.allclose(self.cov, self.cov.T, rtol=0.0, atol=rel_tol * scale):
            raise ValueError("covariance not symmetric")
        trace = float(np.trace(self.cov))
        eigs = np.linalg.eigvalsh(self.cov)
        if float(eigs.min(initial=0.0)) < -rel_tol * max(trace, 0.0):
            raise ValueError(f"covariance not PSD: min eigenvalue {eigs.min()}")
