"""Ball flight, scripted obstacles and the fixed pinhole camera."""

import logging

import numpy as np

from manifold_intercept.domain.collision import Capsule, ConvexShape, Hull, Sphere
from manifold_intercept.domain.value_objects import (
    BallState,
    CameraModel,
    FeatureObservation,
    ObstacleScript,
    ShapeKind,
)
from manifold_intercept.errors import InterceptError

logger = logging.getLogger(__name__)

RngLike = int | np.random.Generator | None


def _rng(seed: RngLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def step_ball(ball: BallState, dt: float, gravity=(0.0, 0.0, -9.81)) -> BallState:
    """
    Advance the ball by one symplectic-Euler step under constant gravity.

    Args:
        ball: Current state.
        dt: Step length in seconds, must be positive.
        gravity: Acceleration vector (m/s^2).

    Returns:
        The new ball state; radius is carried over.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = np.asarray(ball.velocity) + np.asarray(gravity, dtype=float) * dt
    p = np.asarray(ball.position) + v * dt
    return BallState(
        position=tuple(float(c) for c in p),
        velocity=tuple(float(c) for c in v),
        radius=ball.radius,
    )


def ball_energy(ball: BallState, gravity=(0.0, 0.0, -9.81)) -> float:
    """Specific mechanical energy (J/kg) of the ball."""
    v = np.asarray(ball.velocity)
    return float(0.5 * v @ v - np.asarray(gravity) @ np.asarray(ball.position))


def to_camera(cam: CameraModel, p_world) -> np.ndarray:
    """World point in camera coordinates."""
    return cam.R @ np.asarray(p_world, dtype=float) + cam.t


def project(
    cam: CameraModel,
    p_world,
    rng_seed: RngLike = None,
    timestamp: float = 0.0,
) -> FeatureObservation:
    """
    Project a world point into centred pixel features plus depth.

    Gaussian noise with the camera's sigmas is added when they are non-zero.

    Raises:
        NotVisibleError: If the point is not in front of the camera.
    """
    X, Y, Z = to_camera(cam, p_world)
    if Z <= 0.0:
        raise NotVisibleError(f"point at camera depth {Z:.4f} m is behind the camera", depth=float(Z))
    f_x = cam.focal_length * X / Z
    f_y = cam.focal_length * Y / Z
    if cam.pixel_noise_sigma > 0.0 or cam.depth_noise_sigma > 0.0:
        rng = _rng(rng_seed)
        f_x += rng.normal(0.0, cam.pixel_noise_sigma)
        f_y += rng.normal(0.0, cam.pixel_noise_sigma)
        Z += rng.normal(0.0, cam.depth_noise_sigma)
    return FeatureObservation(f_x=float(f_x), f_y=float(f_y), Z=float(Z), timestamp=timestamp)


def back_project(cam: CameraModel, f: FeatureObservation) -> np.ndarray:
    """
    Recover the world point from features and depth.

    Raises:
        DepthDomainError: If the depth is not positive.
    """
    if not f.Z > 0.0:
        raise DepthDomainError(f"depth must be positive, got {f.Z}")
    p_cam = np.array([f.f_x * f.Z / cam.focal_length, f.f_y * f.Z / cam.focal_length, f.Z])
    return cam.R.T @ (p_cam - cam.t)


def observation_times(cam: CameraModel, start: float, end: float) -> np.ndarray:
    """Frame timestamps in ``[start, end]`` spaced exactly ``1 / frame_rate`` apart."""
    period = 1.0 / cam.frame_rate
    count = int(np.floor((end - start) / period + 1e-9)) + 1
    return start + period * np.arange(max(count, 0))


def obstacle_position(script: ObstacleScript, t: float) -> np.ndarray:
    """Clamped piecewise-linear interpolation of the waypoints."""
    times = np.array([w.time for w in script.waypoints])
    positions = np.array([w.position for w in script.waypoints], dtype=float)
    if len(times) == 1 or t <= times[0]:
        return positions[0].copy()
    if t >= times[-1]:
        return positions[-1].copy()
    k = int(np.searchsorted(times, t, side="right")) - 1
    s = (t - times[k]) / (times[k + 1] - times[k])
    return (1.0 - s) * positions[k] + s * positions[k + 1]


def obstacle_at(script: ObstacleScript, t: float) -> ConvexShape:
    """World-frame convex shape of a scripted obstacle at time ``t``, margin included."""
    c = obstacle_position(script, t)
    shape = script.shape
    if shape.kind == ShapeKind.SPHERE:
        return Sphere(center=c, radius=shape.radius, margin=shape.margin)
    if shape.kind == ShapeKind.CAPSULE:
        p0, p1 = (np.asarray(p, dtype=float) for p in shape.segment)
        return Capsule(p0=c + p0, p1=c + p1, radius=shape.radius, margin=shape.margin)
    return Hull.box(c, shape.half_extents, margin=shape.margin)


def obstacles_at(scripts: list[ObstacleScript], t: float) -> list[ConvexShape]:
    return [obstacle_at(s, t) for s in scripts]


class NotVisibleError(InterceptError):
    """Raised when a point cannot be seen by the camera."""

    def __init__(self, message: str, depth: float | None = None):
        super().__init__(message)
        self.depth = depth


class DepthDomainError(InterceptError, ValueError):
    """Raised when back-projection receives a non-positive depth."""

    pass
