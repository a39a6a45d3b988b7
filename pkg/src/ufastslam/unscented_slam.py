"""Sigma-point Rao-Blackwellized SLAM filter.

Each particle carries a pose Gaussian and one 2D Gaussian per landmark.
A step augments the pose with control and measurement noise (dimension
7), pushes sigma points through the motion model, refines the pose with
every observed known feature in ascending-id order (regenerating the
sigma set after each), samples the particle pose, then runs sigma-point
updates on the observed landmarks and accumulates importance weights.

Public single-particle operations delegate to the same stacked kernels
the vectorized ``step`` uses, so there is one numerical core.
"""

from __future__ import annotations

import numpy as np

from ufastslam.math_utils import (
    log_gaussian_density_2d,
    psd_sqrt_lower_stack,
    symmetrize,
    symmetrize_psd,
    wrap_angle,
    wrap_angle_array,
)
from ufastslam.models import (
    control_noise_cov,
    measure_arrays,
    measurement_jacobians_arrays,
    motion_mean_arrays,
)
from ufastslam.particles import (
    POSE_DIM,
    FilterConfig,
    FilterState,
    LandmarkEstimate,
    Particle,
    effective_particles,
    initial_state,
    normalize_log_weights,
    particle_stream,
    resample,
    resample_stream,
)
from ufastslam.types import ControlInput, Gaussian, NumericalError, Pose2D, RangeBearing
from ufastslam.unscented import (
    SigmaPointSet,
    UtParams,
    cross_cov_stack,
    sigma_points_stack,
    ut_cov_stack,
    ut_mean_stack,
    ut_residuals_stack,
    ut_weights,
)

AUG_DIM = 7  # pose(3) + control noise(2) + measurement noise(2)
_CTRL = slice(3, 5)
_MEAS = slice(5, 7)

_DET_FLOOR = 1e-300


def _augmented_arrays(
    pose_means: np.ndarray, pose_covs: np.ndarray, q_cov: np.ndarray, r_cov: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    m = pose_means.shape[0]
    means = np.zeros((m, AUG_DIM))
    means[:, :POSE_DIM] = pose_means
    covs = np.zeros((m, AUG_DIM, AUG_DIM))
    covs[:, :POSE_DIM, :POSE_DIM] = pose_covs
    covs[:, _CTRL, _CTRL] = q_cov
    covs[:, _MEAS, _MEAS] = r_cov
    return means, covs


def _augmented_points(
    pose_means: np.ndarray,
    pose_covs: np.ndarray,
    q_cov: np.ndarray,
    r_cov: np.ndarray,
    lam: float,
) -> np.ndarray:
    means, covs = _augmented_arrays(pose_means, pose_covs, q_cov, r_cov)
    return sigma_points_stack(means, covs, lam)


def _propagate_points(points: np.ndarray, u: ControlInput, dt: float) -> np.ndarray:
    """Push the pose block of augmented points through the motion model.

    Each point perturbs the control with its own control-noise
    components; measurement-noise components ride along untouched.
    """
    out = points.copy()
    v = u.v + points[..., 3]
    w = u.w + points[..., 4]
    out[..., :POSE_DIM] = motion_mean_arrays(points[..., :POSE_DIM], v, w, dt)
    return out


def _gain(cross: np.ndarray, s: np.ndarray) -> np.ndarray:
    """K = cross @ inv(S) for stacked 2x2 S, with a degenerate-case guard.

    A singular S with vanishing cross-covariance means the predicted
    measurement is delta-certain and carries no correction: the gain is
    zero. A singular S with information to transfer is a failure.
    """
    a = s[..., 0, 0]
    b = s[..., 0, 1]
    c = s[..., 1, 0]
    d = s[..., 1, 1]
    det = a * d - b * c
    bad = det <= _DET_FLOOR
    if np.any(bad):
        if np.any(np.abs(cross[bad]) > 1e-12):
            idx = int(np.flatnonzero(bad)[0])
            raise NumericalError(f"singular innovation covariance for particle {idx}")
        det = np.where(bad, 1.0, det)
    inv = np.empty_like(s)
    inv[..., 0, 0] = d / det
    inv[..., 0, 1] = -b / det
    inv[..., 1, 0] = -c / det
    inv[..., 1, 1] = a / det
    gain = cross @ inv
    if np.any(bad):
        gain[bad] = 0.0
    return gain


def _refine_stack(
    pose_means: np.ndarray,
    pose_covs: np.ndarray,
    points: np.ndarray,
    lm_means: np.ndarray,
    z: RangeBearing,
    w_m: np.ndarray,
    w_c: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Feature-conditioned pose update from propagated augmented points."""
    z_pts = measure_arrays(points[..., :POSE_DIM], lm_means[:, None, :])
    z_pts[..., 0] += points[..., 5]
    z_pts[..., 1] = wrap_angle_array(z_pts[..., 1] + points[..., 6])
    z_hat = ut_mean_stack(z_pts, w_m, angle_indices=(1,))
    dz = ut_residuals_stack(z_pts, z_hat, (1,))
    s = symmetrize(ut_cov_stack(dz, w_c))
    dx = ut_residuals_stack(points[..., :POSE_DIM], pose_means, (2,))
    cross = cross_cov_stack(dx, dz, w_c)  # (M, 3, 2)
    gain = _gain(cross, s)
    nu = z.as_array()[None, :] - z_hat
    nu[:, 1] = wrap_angle_array(nu[:, 1])
    new_means = pose_means + np.einsum("mij,mj->mi", gain, nu)
    new_means[:, 2] = wrap_angle_array(new_means[:, 2])
    new_covs = symmetrize(pose_covs - gain @ s @ np.swapaxes(gain, -1, -2))
    return new_means, new_covs, nu, s


def _update_landmarks_stack(
    lm_means: np.ndarray,
    lm_covs: np.ndarray,
    samples: np.ndarray,
    z: RangeBearing,
    r_cov: np.ndarray,
    ut: UtParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Sigma-point landmark update conditioned on sampled poses."""
    w_m, w_c = ut_weights(2, ut)
    pts = sigma_points_stack(lm_means, lm_covs, ut.lam(2))  # (M, 5, 2)
    z_pts = measure_arrays(samples[:, None, :], pts)
    z_hat = ut_mean_stack(z_pts, w_m, angle_indices=(1,))
    dz = ut_residuals_stack(z_pts, z_hat, (1,))
    s = symmetrize(ut_cov_stack(dz, w_c)) + r_cov
    dm = pts - lm_means[:, None, :]
    cross = cross_cov_stack(dm, dz, w_c)
    gain = _gain(cross, s)
    nu = z.as_array()[None, :] - z_hat
    nu[:, 1] = wrap_angle_array(nu[:, 1])
    new_means = lm_means + np.einsum("mij,mj->mi", gain, nu)
    new_covs = symmetrize(lm_covs - gain @ s @ np.swapaxes(gain, -1, -2))
    return new_means, new_covs, z_hat, s, nu


def _init_landmarks_stack(
    pose_means: np.ndarray, pose_covs: np.ndarray, z: RangeBearing, r_cov: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """First sight of a feature: invert the measurement, linearize both noises."""
    heading = pose_means[:, 2] + z.phi
    c = np.cos(heading)
    s = np.sin(heading)
    means = pose_means[:, :2] + z.r * np.stack([c, s], axis=-1)
    m = pose_means.shape[0]
    h_pose = np.zeros((m, 2, 3))
    h_pose[:, 0, 0] = 1.0
    h_pose[:, 1, 1] = 1.0
    h_pose[:, 0, 2] = -z.r * s
    h_pose[:, 1, 2] = z.r * c
    h_z = np.empty((m, 2, 2))
    h_z[:, 0, 0] = c
    h_z[:, 0, 1] = -z.r * s
    h_z[:, 1, 0] = s
    h_z[:, 1, 1] = z.r * c
    covs = h_z @ r_cov @ np.swapaxes(h_z, -1, -2)
    covs += h_pose @ pose_covs @ np.swapaxes(h_pose, -1, -2)
    return means, symmetrize(covs)


def _sample_poses(
    pose_means: np.ndarray, pose_covs: np.ndarray, seed: int, step_index: int
) -> np.ndarray:
    """One pose draw per particle from its own counter-based stream."""
    m = pose_means.shape[0]
    eps = np.empty((m, POSE_DIM))
    for k in range(m):
        eps[k] = particle_stream(seed, step_index, k).standard_normal(POSE_DIM)
    roots = psd_sqrt_lower_stack(pose_covs)
    samples = pose_means + np.einsum("mij,mj->mi", roots, eps)
    samples[:, 2] = wrap_angle_array(samples[:, 2])
    return samples


def _jacobian_log_weight(
    pred_means: np.ndarray,
    pred_covs: np.ndarray,
    lm_means: np.ndarray,
    lm_covs: np.ndarray,
    z: RangeBearing,
    r_cov: np.ndarray,
) -> np.ndarray:
    """Linearized importance weight: N(z - h; 0, Hx P Hx^T + Hm S Hm^T + R)."""
    z_hat = measure_arrays(pred_means, lm_means)
    h_pose, h_lm = measurement_jacobians_arrays(pred_means, lm_means)
    cov = h_pose @ pred_covs @ np.swapaxes(h_pose, -1, -2)
    cov += h_lm @ lm_covs @ np.swapaxes(h_lm, -1, -2)
    cov += r_cov
    nu = z.as_array()[None, :] - z_hat
    nu[:, 1] = wrap_angle_array(nu[:, 1])
    return log_gaussian_density_2d(nu, cov, on_singular="neutral")


# --- public single-particle operations -------------------------------------


def augment(p: Particle, q_cov: np.ndarray, r_cov: np.ndarray) -> Gaussian:
    """Augmented 7-dim state: pose stacked with zero-mean noise blocks."""
    means, covs = _augmented_arrays(
        p.pose.mean[None, :], p.pose.cov[None, :, :], np.asarray(q_cov, float), np.asarray(r_cov, float)
    )
    return Gaussian(means[0], covs[0])


def predict_pose(
    p: Particle,
    u: ControlInput,
    dt: float,
    ut: UtParams,
    q_cov: np.ndarray,
    r_cov: np.ndarray,
) -> tuple[Gaussian, SigmaPointSet]:
    """Sigma-point motion prediction of one particle's pose belief."""
    w_m, w_c = ut_weights(AUG_DIM, ut)
    points = _augmented_points(
        p.pose.mean[None, :], p.pose.cov[None, :, :], np.asarray(q_cov, float),
        np.asarray(r_cov, float), ut.lam(AUG_DIM),
    )
    points = _propagate_points(points, u, dt)
    mean = ut_mean_stack(points[..., :POSE_DIM], w_m, angle_indices=(2,))
    res = ut_residuals_stack(points[..., :POSE_DIM], mean, (2,))
    cov = symmetrize_psd(ut_cov_stack(res, w_c))[0]
    return Gaussian(mean[0], cov), SigmaPointSet(points[0], w_m, w_c)


def refine_pose_with_feature(
    pose: Gaussian, points: SigmaPointSet, lm: LandmarkEstimate, z: RangeBearing
) -> tuple[Gaussian, np.ndarray, np.ndarray]:
    """Condition a predicted pose on one known-feature observation.

    ``points`` is the augmented sigma set (measurement noise in the last
    two columns) already propagated to the current time. Returns the
    updated pose plus the innovation and its covariance.
    """
    if lm.id != z.landmark_id:
        raise ValueError(f"landmark id mismatch: {lm.id} vs {z.landmark_id}")
    means, covs, nu, s = _refine_stack(
        pose.mean[None, :],
        pose.cov[None, :, :],
        points.points[None, :, :],
        lm.mean[None, :],
        z,
        points.w_m,
        points.w_c,
    )
    return Gaussian(means[0], symmetrize(covs[0])), nu[0], s[0]


def init_landmark(pose: Gaussian, z: RangeBearing, r_cov: np.ndarray) -> LandmarkEstimate:
    """Initialize a landmark estimate from the first observation."""
    if z.r <= 0.0:
        raise ValueError(f"range must be > 0, got {z.r}")
    means, covs = _init_landmarks_stack(
        pose.mean[None, :], pose.cov[None, :, :], z, np.asarray(r_cov, float)
    )
    return LandmarkEstimate(z.landmark_id, means[0], covs[0])


def update_landmark(
    lm: LandmarkEstimate,
    pose_sample: Pose2D,
    z: RangeBearing,
    r_cov: np.ndarray,
    ut: UtParams,
) -> tuple[LandmarkEstimate, RangeBearing, np.ndarray]:
    """Sigma-point landmark update; returns (estimate, predicted z, S)."""
    if lm.id != z.landmark_id:
        raise ValueError(f"landmark id mismatch: {lm.id} vs {z.landmark_id}")
    means, covs, z_hat, s, _ = _update_landmarks_stack(
        lm.mean[None, :],
        lm.cov[None, :, :],
        pose_sample.as_array()[None, :],
        z,
        np.asarray(r_cov, float),
        ut,
    )
    predicted = RangeBearing(lm.id, max(float(z_hat[0, 0]), 0.0), float(z_hat[0, 1]))
    return LandmarkEstimate(lm.id, means[0], covs[0]), predicted, s[0]


def log_importance_weight(z: RangeBearing, z_hat: RangeBearing, s: np.ndarray) -> float:
    """Log Gaussian density of the innovation under covariance s."""
    nu = np.array([z.r - z_hat.r, wrap_angle(z.phi - z_hat.phi)])
    return float(log_gaussian_density_2d(nu, np.asarray(s, float), on_singular="raise"))


def importance_weight(z: RangeBearing, z_hat: RangeBearing, s: np.ndarray) -> float:
    """Importance weight |2 pi S|^-1/2 exp(-nu' S^-1 nu / 2)."""
    return float(np.exp(log_importance_weight(z, z_hat, s)))


class UnscentedFastSlam:
    """Sigma-point RBPF SLAM with a fixed config and run seed.

    A full run with the same seed and configuration is bit-reproducible;
    per-particle randomness comes from counter-based streams keyed by
    (seed, step index, particle index).
    """

    def __init__(self, config: FilterConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)
        self._w7 = ut_weights(AUG_DIM, config.ut)
        self._lam7 = config.ut.lam(AUG_DIM)

    def initial_state(self, pose: Pose2D, pose_cov=None) -> FilterState:
        return initial_state(self.config.particle_count, pose, pose_cov)

    def step(
        self,
        state: FilterState,
        u: ControlInput,
        dt: float,
        observations: list[RangeBearing],
    ) -> FilterState:
        """Advance the ensemble by one control interval plus observations."""
        cfg = self.config
        ids = [z.landmark_id for z in observations]
        if len(set(ids)) != len(ids):
            raise ValueError("observation ids must be unique within a step")
        obs = sorted(observations, key=lambda z: z.landmark_id)
        known = [z for z in obs if z.landmark_id in state.landmark_ids]
        new = [z for z in obs if z.landmark_id not in state.landmark_ids]
        q_cov = control_noise_cov(u, cfg.motion)
        r_cov = cfg.sensor.cov()
        w_m, w_c = self._w7

        # predict
        points = _augmented_points(state.pose_means, state.pose_covs, q_cov, r_cov, self._lam7)
        points = _propagate_points(points, u, dt)
        pose_means = ut_mean_stack(points[..., :POSE_DIM], w_m, angle_indices=(2,))
        res = ut_residuals_stack(points[..., :POSE_DIM], pose_means, (2,))
        pose_covs = symmetrize_psd(ut_cov_stack(res, w_c))
        pred_means, pred_covs = pose_means, pose_covs  # pre-refinement, for jacobian weights

        # per-feature pose refinement with sigma regeneration between features
        log_w = np.zeros(state.particle_count)
        index_of = {lid: j for j, lid in enumerate(state.landmark_ids)}
        for i, z in enumerate(known):
            lm_means = state.landmark_means[:, index_of[z.landmark_id]]
            pose_means, pose_covs, nu, s = _refine_stack(
                pose_means, pose_covs, points, lm_means, z, w_m, w_c
            )
            if cfg.pose_innovation_in_weight:
                log_w += log_gaussian_density_2d(nu, s, on_singular="neutral")
            if i + 1 < len(known):
                points = _augmented_points(pose_means, pose_covs, q_cov, r_cov, self._lam7)

        samples = _sample_poses(pose_means, pose_covs, self.seed, state.step_index)

        # landmark map: update observed, copy unobserved, append new
        lm_means = state.landmark_means.copy()
        lm_covs = state.landmark_covs.copy()
        for z in known:
            j = index_of[z.landmark_id]
            upd_means, upd_covs, z_hat, s, nu = _update_landmarks_stack(
                lm_means[:, j], lm_covs[:, j], samples, z, r_cov, cfg.ut
            )
            if cfg.weight_form == "unscented":
                log_w += log_gaussian_density_2d(nu, s, on_singular="neutral")
            else:
                log_w += _jacobian_log_weight(
                    pred_means, pred_covs, state.landmark_means[:, j],
                    state.landmark_covs[:, j], z, r_cov,
                )
            lm_means[:, j] = upd_means
            lm_covs[:, j] = upd_covs

        all_ids = list(state.landmark_ids)
        for z in new:
            means, covs = _init_landmarks_stack(samples, pose_covs, z, r_cov)
            lm_means = np.concatenate([lm_means, means[:, None, :]], axis=1)
            lm_covs = np.concatenate([lm_covs, covs[:, None, :, :]], axis=1)
            all_ids.append(z.landmark_id)
        if new:
            order = np.argsort(all_ids, kind="stable")
            all_ids = [all_ids[i] for i in order]
            lm_means = lm_means[:, order]
            lm_covs = lm_covs[:, order]

        weights, log_weights = normalize_log_weights(state.log_weights + log_w)
        next_state = FilterState(
            step_index=state.step_index + 1,
            pose_means=samples,
            pose_covs=pose_covs,
            landmark_ids=tuple(all_ids),
            landmark_means=lm_means,
            landmark_covs=lm_covs,
            log_weights=log_weights,
            n_eff=effective_particles(weights),
            resampled=False,
        )
        return resample(
            next_state,
            resample_stream(self.seed, state.step_index),
            cfg.resample_fraction * cfg.particle_count,
        )
