"""Velocity motion model, range-bearing measurement model, and Jacobians.

Scalar functions operate on the value types; ``*_arrays`` variants take
plain ndarrays with arbitrary leading shape and back the vectorized
filter kernels and the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ufastslam.math_utils import wrap_angle, wrap_angle_array
from ufastslam.types import ControlInput, GeometryError, LandmarkTruth, Pose2D, RangeBearing

# Below this |w| the arc motion model switches to its straight-line limit.
EPS_W = 1e-6

_MIN_LANDMARK_DIST = 1e-9
_MIN_LANDMARK_DIST_SQ = 1e-12


@dataclass(frozen=True, slots=True)
class MotionNoiseParams:
    """Control-noise gains: std devs are a1|v| + a2|w| and a3|v| + a4|w|."""

    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    a4: float = 0.0

    def __post_init__(self) -> None:
        for name in ("a1", "a2", "a3", "a4"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True, slots=True)
class SensorNoiseParams:
    """Range/bearing measurement noise standard deviations."""

    sigma_r: float
    sigma_phi: float

    def __post_init__(self) -> None:
        if self.sigma_r <= 0.0 or self.sigma_phi <= 0.0:
            raise ValueError("sensor noise std devs must be > 0")

    def cov(self) -> np.ndarray:
        """Measurement noise covariance diag(sigma_r^2, sigma_phi^2)."""
        return np.diag([self.sigma_r**2, self.sigma_phi**2])


def motion_mean_arrays(
    pose: np.ndarray, v: np.ndarray, w: np.ndarray, dt: float
) -> np.ndarray:
    """Noise-free arc motion for stacked poses (..., 3) and velocities (...)."""
    x = pose[..., 0]
    y = pose[..., 1]
    th = pose[..., 2]
    straight = np.abs(w) < EPS_W
    w_safe = np.where(straight, 1.0, w)
    k = v / w_safe
    th2 = th + w * dt
    sin_th = np.sin(th)
    cos_th = np.cos(th)
    x_out = x + np.where(straight, v * dt * cos_th, k * (np.sin(th2) - sin_th))
    y_out = y + np.where(straight, v * dt * sin_th, k * (cos_th - np.cos(th2)))
    th_out = wrap_angle_array(np.where(straight, th, th2))
    return np.stack([x_out, y_out, th_out], axis=-1)


def motion_mean(pose: Pose2D, u: ControlInput, dt: float) -> Pose2D:
    """Exact arc (or straight-line limit) pose after applying u for dt seconds."""
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    out = motion_mean_arrays(pose.as_array(), np.float64(u.v), np.float64(u.w), dt)
    return Pose2D.from_array(out)


def control_noise_std(u: ControlInput, p: MotionNoiseParams) -> np.ndarray:
    """Std devs of the applied-velocity error for control u."""
    av = abs(u.v)
    aw = abs(u.w)
    return np.array([p.a1 * av + p.a2 * aw, p.a3 * av + p.a4 * aw])


def control_noise_cov(u: ControlInput, p: MotionNoiseParams) -> np.ndarray:
    """Covariance Q of the applied-velocity error (v_hat - v, w_hat - w)."""
    return np.diag(control_noise_std(u, p) ** 2)


def sample_motion(
    pose: Pose2D,
    u: ControlInput,
    dt: float,
    p: MotionNoiseParams,
    rng: np.random.Generator,
) -> Pose2D:
    """Draw noisy applied velocities, then move along the exact arc."""
    std = control_noise_std(u, p)
    eps = rng.standard_normal(2)
    noisy = ControlInput(u.v + std[0] * eps[0], u.w + std[1] * eps[1])
    return motion_mean(pose, noisy, dt)


def measure_arrays(pose: np.ndarray, landmark: np.ndarray) -> np.ndarray:
    """Range-bearing (..., 2) from stacked poses (..., 3) to landmark points (..., 2)."""
    dx = landmark[..., 0] - pose[..., 0]
    dy = landmark[..., 1] - pose[..., 1]
    r = np.hypot(dx, dy)
    phi = wrap_angle_array(np.arctan2(dy, dx) - pose[..., 2])
    return np.stack([r, phi], axis=-1)


def measure(pose: Pose2D, lm: LandmarkTruth) -> RangeBearing:
    """Noise-free range and bearing of a landmark from a pose."""
    z = measure_arrays(pose.as_array(), lm.as_array())
    if z[0] <= _MIN_LANDMARK_DIST:
        raise GeometryError(f"landmark {lm.id} coincident with robot position")
    return RangeBearing(lm.id, z[0], z[1])


def inverse_measure_arrays(pose: np.ndarray, z: np.ndarray) -> np.ndarray:
    """World position implied by stacked poses and range-bearing pairs."""
    heading = pose[..., 2] + z[..., 1]
    return np.stack(
        [pose[..., 0] + z[..., 0] * np.cos(heading), pose[..., 1] + z[..., 0] * np.sin(heading)],
        axis=-1,
    )


def inverse_measure(pose: Pose2D, z: RangeBearing) -> tuple[float, float]:
    """World position of the landmark implied by an observation."""
    if z.r <= 0.0:
        raise ValueError(f"range must be > 0, got {z.r}")
    m = inverse_measure_arrays(pose.as_array(), z.as_array())
    return float(m[0]), float(m[1])


def measurement_jacobians_arrays(
    pose: np.ndarray, landmark: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (..., 2, 3) pose and (..., 2, 2) landmark Jacobians of the measurement."""
    dx = landmark[..., 0] - pose[..., 0]
    dy = landmark[..., 1] - pose[..., 1]
    q = dx * dx + dy * dy
    r = np.sqrt(q)
    zeros = np.zeros_like(dx)
    h_lm = np.stack(
        [
            np.stack([dx / r, dy / r], axis=-1),
            np.stack([-dy / q, dx / q], axis=-1),
        ],
        axis=-2,
    )
    h_pose = np.stack(
        [
            np.stack([-dx / r, -dy / r, zeros], axis=-1),
            np.stack([dy / q, -dx / q, zeros - 1.0], axis=-1),
        ],
        axis=-2,
    )
    return h_pose, h_lm


def measurement_jacobians(pose: Pose2D, lm_mean) -> tuple[np.ndarray, np.ndarray]:
    """Analytic derivatives of (r, phi) w.r.t. pose and landmark position."""
    lm_mean = np.asarray(lm_mean, dtype=float)
    dx = lm_mean[0] - pose.x
    dy = lm_mean[1] - pose.y
    if dx * dx + dy * dy <= _MIN_LANDMARK_DIST_SQ:
        raise GeometryError("landmark too close to robot for a measurement Jacobian")
    return measurement_jacobians_arrays(pose.as_array(), lm_mean)


def inverse_measure_jacobians(pose: Pose2D, z: RangeBearing) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the implied landmark position w.r.t. pose and (r, phi)."""
    heading = pose.theta + z.phi
    c = np.cos(heading)
    s = np.sin(heading)
    h_pose = np.array([[1.0, 0.0, -z.r * s], [0.0, 1.0, z.r * c]])
    h_z = np.array([[c, -z.r * s], [s, z.r * c]])
    return h_pose, h_z


def motion_jacobians(pose: Pose2D, u: ControlInput, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the arc motion w.r.t. pose (3x3) and control (3x2).

    Near w = 0 the analytic w->0 limit is used so the linearization stays
    continuous across the branch (the raw straight-line branch would drop
    the heading sensitivity to w entirely).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    v, w = u.v, u.w
    th = pose.theta
    sin_th = np.sin(th)
    cos_th = np.cos(th)
    f_pose = np.eye(3)
    f_u = np.zeros((3, 2))
    if abs(w) < EPS_W:
        f_pose[0, 2] = -v * dt * sin_th
        f_pose[1, 2] = v * dt * cos_th
        f_u[0, 0] = dt * cos_th
        f_u[1, 0] = dt * sin_th
        f_u[0, 1] = -0.5 * v * dt * dt * sin_th
        f_u[1, 1] = 0.5 * v * dt * dt * cos_th
        f_u[2, 1] = dt
        return f_pose, f_u
    th2 = th + w * dt
    sin_th2 = np.sin(th2)
    cos_th2 = np.cos(th2)
    k = v / w
    f_pose[0, 2] = k * (cos_th2 - cos_th)
    f_pose[1, 2] = k * (sin_th2 - sin_th)
    f_u[0, 0] = (sin_th2 - sin_th) / w
    f_u[1, 0] = (cos_th - cos_th2) / w
    f_u[0, 1] = -k / w * (sin_th2 - sin_th) + k * dt * cos_th2
    f_u[1, 1] = -k / w * (cos_th - cos_th2) + k * dt * sin_th2
    f_u[2, 1] = dt
    return f_pose, f_u


def motion_jacobians_arrays(
    pose: np.ndarray, v: float, w: float, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked motion Jacobians for poses (..., 3) under one shared control."""
    th = pose[..., 2]
    sin_th = np.sin(th)
    cos_th = np.cos(th)
    shape = th.shape
    f_pose = np.broadcast_to(np.eye(3), shape + (3, 3)).copy()
    f_u = np.zeros(shape + (3, 2))
    if abs(w) < EPS_W:
        f_pose[..., 0, 2] = -v * dt * sin_th
        f_pose[..., 1, 2] = v * dt * cos_th
        f_u[..., 0, 0] = dt * cos_th
        f_u[..., 1, 0] = dt * sin_th
        f_u[..., 0, 1] = -0.5 * v * dt * dt * sin_th
        f_u[..., 1, 1] = 0.5 * v * dt * dt * cos_th
        f_u[..., 2, 1] = dt
        return f_pose, f_u
    th2 = th + w * dt
    sin_th2 = np.sin(th2)
    cos_th2 = np.cos(th2)
    k = v / w
    f_pose[..., 0, 2] = k * (cos_th2 - cos_th)
    f_pose[..., 1, 2] = k * (sin_th2 - sin_th)
    f_u[..., 0, 0] = (sin_th2 - sin_th) / w
    f_u[..., 1, 0] = (cos_th - cos_th2) / w
    f_u[..., 0, 1] = -k / w * (sin_th2 - sin_th) + k * dt * cos_th2
    f_u[..., 1, 1] = -k / w * (cos_th - cos_th2) + k * dt * sin_th2
    f_u[..., 2, 1] = dt
    return f_pose, f_u
