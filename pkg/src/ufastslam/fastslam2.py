"""Jacobian-based FastSLAM 2.0 baseline.

Mirrors the sigma-point filter's control flow exactly -- same
observation ordering, landmark initialization, pose sampling streams,
and resampling -- so a comparison between the two isolates the
linearization difference.
"""

from __future__ import annotations

import numpy as np

from ufastslam.math_utils import (
    log_gaussian_density_2d,
    symmetrize,
    wrap_angle_array,
)
from ufastslam.models import (
    control_noise_cov,
    measure_arrays,
    measurement_jacobians_arrays,
    motion_jacobians_arrays,
    motion_mean_arrays,
)
from ufastslam.particles import (
    FilterConfig,
    FilterState,
    LandmarkEstimate,
    Particle,
    effective_particles,
    initial_state,
    normalize_log_weights,
    resample,
    resample_stream,
)
from ufastslam.types import ControlInput, Gaussian, Pose2D, RangeBearing
from ufastslam.unscented_slam import _gain, _init_landmarks_stack, _sample_poses


def _ekf_predict(
    pose_means: np.ndarray, pose_covs: np.ndarray, u: ControlInput, dt: float, q_cov: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    f_pose, f_u = motion_jacobians_arrays(pose_means, u.v, u.w, dt)
    means = motion_mean_arrays(pose_means, np.float64(u.v), np.float64(u.w), dt)
    covs = f_pose @ pose_covs @ np.swapaxes(f_pose, -1, -2)
    covs += f_u @ q_cov @ np.swapaxes(f_u, -1, -2)
    return means, symmetrize(covs)


def _ekf_refine(
    pose_means: np.ndarray,
    pose_covs: np.ndarray,
    lm_means: np.ndarray,
    lm_covs: np.ndarray,
    z: RangeBearing,
    r_cov: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One linearized proposal refinement; returns (means, covs, nu, S)."""
    z_hat = measure_arrays(pose_means, lm_means)
    h_pose, h_lm = measurement_jacobians_arrays(pose_means, lm_means)
    s = h_pose @ pose_covs @ np.swapaxes(h_pose, -1, -2)
    s += h_lm @ lm_covs @ np.swapaxes(h_lm, -1, -2)
    s = symmetrize(s) + r_cov
    cross = pose_covs @ np.swapaxes(h_pose, -1, -2)  # (M, 3, 2)
    gain = _gain(cross, s)
    nu = z.as_array()[None, :] - z_hat
    nu[:, 1] = wrap_angle_array(nu[:, 1])
    means = pose_means + np.einsum("mij,mj->mi", gain, nu)
    means[:, 2] = wrap_angle_array(means[:, 2])
    covs = symmetrize(pose_covs - gain @ s @ np.swapaxes(gain, -1, -2))
    return means, covs, nu, s


def _ekf_update_landmarks(
    lm_means: np.ndarray,
    lm_covs: np.ndarray,
    samples: np.ndarray,
    z: RangeBearing,
    r_cov: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    z_hat = measure_arrays(samples, lm_means)
    _, h_lm = measurement_jacobians_arrays(samples, lm_means)
    s = symmetrize(h_lm @ lm_covs @ np.swapaxes(h_lm, -1, -2)) + r_cov
    cross = lm_covs @ np.swapaxes(h_lm, -1, -2)
    gain = _gain(cross, s)
    nu = z.as_array()[None, :] - z_hat
    nu[:, 1] = wrap_angle_array(nu[:, 1])
    means = lm_means + np.einsum("mij,mj->mi", gain, nu)
    covs = symmetrize(lm_covs - gain @ s @ np.swapaxes(gain, -1, -2))
    return means, covs


# --- public single-particle operations -------------------------------------


def ekf_proposal(
    p: Particle,
    u: ControlInput,
    dt: float,
    observations: list[RangeBearing],
    q_cov: np.ndarray,
    r_cov: np.ndarray,
) -> Gaussian:
    """Linearized pose proposal: motion prediction plus per-feature refinement."""
    means = p.pose.mean[None, :]
    covs = p.pose.cov[None, :, :]
    means, covs = _ekf_predict(means, covs, u, dt, np.asarray(q_cov, float))
    for z in sorted(observations, key=lambda ob: ob.landmark_id):
        lm = p.landmarks.get(z.landmark_id)
        if lm is None:
            continue
        means, covs, _, _ = _ekf_refine(
            means, covs, lm.mean[None, :], lm.cov[None, :, :], z, np.asarray(r_cov, float)
        )
    return Gaussian(means[0], symmetrize(covs[0]))


def ekf_landmark_update(
    lm: LandmarkEstimate, pose_sample: Pose2D, z: RangeBearing, r_cov: np.ndarray
) -> LandmarkEstimate:
    """Standard EKF landmark update conditioned on a sampled pose."""
    if lm.id != z.landmark_id:
        raise ValueError(f"landmark id mismatch: {lm.id} vs {z.landmark_id}")
    means, covs = _ekf_update_landmarks(
        lm.mean[None, :],
        lm.cov[None, :, :],
        pose_sample.as_array()[None, :],
        z,
        np.asarray(r_cov, float),
    )
    return LandmarkEstimate(lm.id, means[0], covs[0])


class FastSlam2:
    """FastSLAM 2.0 with the shared step interface and RNG streams."""

    def __init__(self, config: FilterConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)

    def initial_state(self, pose: Pose2D, pose_cov=None) -> FilterState:
        return initial_state(self.config.particle_count, pose, pose_cov)

    def step(
        self,
        state: FilterState,
        u: ControlInput,
        dt: float,
        observations: list[RangeBearing],
    ) -> FilterState:
        cfg = self.config
        ids = [z.landmark_id for z in observations]
        if len(set(ids)) != len(ids):
            raise ValueError("observation ids must be unique within a step")
        obs = sorted(observations, key=lambda z: z.landmark_id)
        known = [z for z in obs if z.landmark_id in state.landmark_ids]
        new = [z for z in obs if z.landmark_id not in state.landmark_ids]
        q_cov = control_noise_cov(u, cfg.motion)
        r_cov = cfg.sensor.cov()

        pose_means, pose_covs = _ekf_predict(
            state.pose_means, state.pose_covs, u, dt, q_cov
        )

        # proposal refinement; the innovation density at the pre-refinement
        # state is the native FastSLAM 2.0 importance weight
        log_w = np.zeros(state.particle_count)
        index_of = {lid: j for j, lid in enumerate(state.landmark_ids)}
        for z in known:
            j = index_of[z.landmark_id]
            pose_means, pose_covs, nu, s = _ekf_refine(
                pose_means, pose_covs,
                state.landmark_means[:, j], state.landmark_covs[:, j], z, r_cov,
            )
            log_w += log_gaussian_density_2d(nu, s, on_singular="neutral")

        samples = _sample_poses(pose_means, pose_covs, self.seed, state.step_index)

        lm_means = state.landmark_means.copy()
        lm_covs = state.landmark_covs.copy()
        for z in known:
            j = index_of[z.landmark_id]
            lm_means[:, j], lm_covs[:, j] = _ekf_update_landmarks(
                lm_means[:, j], lm_covs[:, j], samples, z, r_cov
            )

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
