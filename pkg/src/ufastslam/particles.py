"""Particle containers, weight bookkeeping, and systematic resampling.

Both SLAM filters share this machinery. ``FilterState`` stores the
ensemble as stacked arrays (every particle carries the same landmark id
set under known data association), which keeps the per-step kernels
vectorized; the ``particles`` property materializes the conventional
per-particle view on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ufastslam.math_utils import symmetrize
from ufastslam.models import MotionNoiseParams, SensorNoiseParams
from ufastslam.types import Gaussian, NumericalError, Pose2D
from ufastslam.unscented import UtParams

POSE_DIM = 3


@dataclass(frozen=True, slots=True)
class LandmarkEstimate:
    """Per-particle landmark belief: identity, 2D mean, 2x2 covariance."""

    id: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(2)
        cov = np.array(self.cov, dtype=float).reshape(2, 2)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True, slots=True)
class Particle:
    """One trajectory hypothesis: pose belief, landmark map, weight."""

    pose: Gaussian
    landmarks: dict[int, LandmarkEstimate] = field(default_factory=dict)
    weight: float = 1.0
    log_weight: float = 0.0


@dataclass(frozen=True, slots=True)
class FilterConfig:
    """Shared configuration for both SLAM filters.

    ``weight_form`` selects how importance weights are computed:
    ``"unscented"`` uses the sigma-point innovation covariance of the
    landmark update; ``"jacobian"`` uses the linearized covariance
    H_pose P H_pose^T + H_lm S H_lm^T + R (the FastSLAM 2.0 native form).
    ``pose_innovation_in_weight`` additionally folds the pose-refinement
    innovation density into the weight.
    """

    particle_count: int = 100
    ut: UtParams = field(default_factory=UtParams)
    motion: MotionNoiseParams = field(default_factory=MotionNoiseParams)
    sensor: SensorNoiseParams = field(default_factory=lambda: SensorNoiseParams(0.1, np.deg2rad(1.0)))
    resample_fraction: float = 0.5
    weight_form: str = "unscented"
    pose_innovation_in_weight: bool = False

    def __post_init__(self) -> None:
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if not 0.0 < self.resample_fraction <= 1.0:
            raise ValueError("resample_fraction must be in (0, 1]")
        if self.weight_form not in ("unscented", "jacobian"):
            raise ValueError(f"unknown weight_form {self.weight_form!r}")


@dataclass(frozen=True, slots=True)
class FilterState:
    """Ensemble state after a step, stored as stacked arrays.

    All particles carry the same (ascending) landmark id tuple; known
    data association guarantees this. ``n_eff`` and ``resampled`` record
    the weight diagnostics of the step that produced the state.
    """

    step_index: int
    pose_means: np.ndarray  # (M, 3)
    pose_covs: np.ndarray  # (M, 3, 3)
    landmark_ids: tuple[int, ...]
    landmark_means: np.ndarray  # (M, L, 2)
    landmark_covs: np.ndarray  # (M, L, 2, 2)
    log_weights: np.ndarray  # (M,), normalized
    n_eff: float = 0.0
    resampled: bool = False

    def __post_init__(self) -> None:
        if self.n_eff == 0.0:
            w = self.weights
            object.__setattr__(self, "n_eff", effective_particles(w))

    @property
    def particle_count(self) -> int:
        return self.pose_means.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def particles(self) -> list[Particle]:
        """Per-particle view (built on demand; not used in the hot path)."""
        out = []
        weights = self.weights
        for k in range(self.particle_count):
            landmarks = {
                lid: LandmarkEstimate(lid, self.landmark_means[k, j], self.landmark_covs[k, j])
                for j, lid in enumerate(self.landmark_ids)
            }
            pose = Gaussian(self.pose_means[k], symmetrize(self.pose_covs[k]))
            out.append(
                Particle(pose, landmarks, float(weights[k]), float(self.log_weights[k]))
            )
        return out

    @classmethod
    def from_particles(cls, particles: list[Particle], step_index: int = 0) -> "FilterState":
        """Pack a per-particle list; id sets must agree across particles."""
        if not particles:
            raise ValueError("need at least one particle")
        ids = tuple(sorted(particles[0].landmarks))
        for p in particles[1:]:
            if tuple(sorted(p.landmarks)) != ids:
                raise ValueError("particles must share one landmark id set")
        m = len(particles)
        pose_means = np.stack([p.pose.mean for p in particles])
        pose_covs = np.stack([p.pose.cov for p in particles])
        lm_means = np.zeros((m, len(ids), 2))
        lm_covs = np.zeros((m, len(ids), 2, 2))
        for k, p in enumerate(particles):
            for j, lid in enumerate(ids):
                lm_means[k, j] = p.landmarks[lid].mean
                lm_covs[k, j] = p.landmarks[lid].cov
        logw = np.array([p.log_weight for p in particles], dtype=float)
        _, logw = normalize_log_weights(logw)
        return cls(step_index, pose_means, pose_covs, ids, lm_means, lm_covs, logw)


def initial_state(particle_count: int, pose: Pose2D, pose_cov=None) -> FilterState:
    """All particles at a known initial pose with no landmarks."""
    if pose_cov is None:
        pose_cov = np.zeros((3, 3))
    pose_cov = np.asarray(pose_cov, dtype=float)
    m = particle_count
    return FilterState(
        step_index=0,
        pose_means=np.tile(pose.as_array(), (m, 1)),
        pose_covs=np.tile(pose_cov, (m, 1, 1)),
        landmark_ids=(),
        landmark_means=np.zeros((m, 0, 2)),
        landmark_covs=np.zeros((m, 0, 2, 2)),
        log_weights=np.full(m, -np.log(m)),
    )


def particle_stream(seed: int, step_index: int, particle_index: int) -> np.random.Generator:
    """Counter-based stream owned by one particle at one step.

    Keys are disjoint by construction, so per-particle draws are
    independent of evaluation order and of any concurrency.
    """
    key = np.array(
        [seed % 2**64, ((step_index << 32) | particle_index) % 2**64], dtype=np.uint64
    )
    return np.random.Generator(np.random.Philox(key=key))


def resample_stream(seed: int, step_index: int) -> np.random.Generator:
    """Stream for the resampling barrier of one step."""
    key = np.array([seed % 2**64, ((1 << 63) | step_index) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normalize_log_weights(log_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (weights, log_weights) normalized so the weights sum to 1."""
    log_weights = np.asarray(log_weights, dtype=float)
    top = np.max(log_weights)
    if not np.isfinite(top):
        raise NumericalError("all particle weights vanished")
    shifted = np.exp(log_weights - top)
    total = shifted.sum()
    return shifted / total, log_weights - top - np.log(total)


def effective_particles(weights: np.ndarray) -> float:
    """N_eff = 1 / sum(w_i^2) for normalized weights."""
    weights = np.asarray(weights, dtype=float)
    total_sq = float(np.sum(weights**2))
    if total_sq <= 0.0:
        raise ValueError("weights are all zero")
    if abs(float(weights.sum()) - 1.0) > 1e-6:
        raise ValueError("weights must be normalized")
    return 1.0 / total_sq


def systematic_resample_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Low-variance resampling: one uniform draw, stratified positions.

    Guarantees each index is copied floor(M w_i) or ceil(M w_i) times.
    """
    weights = np.asarray(weights, dtype=float)
    m = weights.shape[0]
    positions = (rng.random() + np.arange(m)) / m
    cumulative = np.cumsum(weights)
    cumulative[-1] = max(cumulative[-1], 1.0)  # guard float shortfall
    return np.searchsorted(cumulative, positions, side="right").clip(max=m - 1)


def resample(state: FilterState, rng: np.random.Generator, threshold: float) -> FilterState:
    """Systematic resampling when N_eff drops below the threshold.

    Above the threshold the state passes through unchanged (original
    weights maintained). Resampling deep-copies particle payloads and
    resets weights to 1/M.
    """
    weights, logw = normalize_log_weights(state.log_weights)
    n_eff = effective_particles(weights)
    if n_eff >= threshold:
        return state
    idx = systematic_resample_indices(weights, rng)
    m = state.particle_count
    return replace(
        state,
        pose_means=state.pose_means[idx].copy(),
        pose_covs=state.pose_covs[idx].copy(),
        landmark_means=state.landmark_means[idx].copy(),
        landmark_covs=state.landmark_covs[idx].copy(),
        log_weights=np.full(m, -np.log(m)),
        n_eff=n_eff,
        resampled=True,
    )
