"""
Image-feature EKF for the thrown ball.

State ``x = [f_x, f_y, Z]``: principal-point-centred pixel features and
depth along the camera axis. Twists are ``(v_x, v_y, v_z, w_x, w_y, w_z)``.
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from manifold_intercept.domain.value_objects import CameraModel, FeatureObservation, ReachShell
from manifold_intercept.domain.world import back_project
from manifold_intercept.errors import InterceptError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_PINV_TOLERANCE = 1e-8
DEFAULT_MIN_DEPTH = 0.05


# ============================================
# Interaction matrices
# ============================================
def _check_depth(Z: float, focal_length: float) -> None:
    if not Z > 0.0:
        raise TrackerDomainError(f"depth must be positive, got {Z}")
    if not focal_length > 0.0:
        raise TrackerDomainError(f"focal length must be positive, got {focal_length}")


def interaction_matrix_point(f_x: float, f_y: float, Z: float, focal_length: float) -> np.ndarray:
    """2x6 map from camera twist to feature velocity (px/s)."""
    _check_depth(Z, focal_length)
    lam = focal_length
    return np.array(
        [
            [-lam / Z, 0.0, f_x / Z, f_x * f_y / lam, -(lam + f_x**2 / lam), f_y],
            [0.0, -lam / Z, f_y / Z, lam + f_y**2 / lam, -f_x * f_y / lam, -f_x],
        ]
    )


def interaction_matrix_depth(f_x: float, f_y: float, Z: float, focal_length: float) -> np.ndarray:
    """1x6 map from camera twist to depth rate (m/s)."""
    _check_depth(Z, focal_length)
    lam = focal_length
    return np.array([[0.0, 0.0, -1.0, -f_y * Z / lam, f_x * Z / lam, 0.0]])


def _interaction_partials(f_x: float, f_y: float, Z: float, lam: float):
    """Derivatives of ``L_s`` and ``L_Z`` with respect to f_x, f_y and Z."""
    dLs = np.zeros((3, 2, 6))
    dLs[0] = [[0, 0, 1 / Z, f_y / lam, -2 * f_x / lam, 0], [0, 0, 0, 0, -f_y / lam, -1]]
    dLs[1] = [[0, 0, 0, f_x / lam, 0, 1], [0, 0, 1 / Z, 2 * f_y / lam, -f_x / lam, 0]]
    dLs[2] = [[lam / Z**2, 0, -f_x / Z**2, 0, 0, 0], [0, lam / Z**2, -f_y / Z**2, 0, 0, 0]]
    dLz = np.zeros((3, 1, 6))
    dLz[0] = [[0, 0, 0, 0, Z / lam, 0]]
    dLz[1] = [[0, 0, 0, -Z / lam, 0, 0]]
    dLz[2] = [[0, 0, 0, -f_y / lam, f_x / lam, 0]]
    return dLs, dLz


def skew(a) -> np.ndarray:
    """Skew-symmetric matrix with ``skew(a) @ b == cross(a, b)``."""
    x, y, z = np.asarray(a, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _check_rotation(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
        raise TrackerDomainError("rotation must be orthonormal with det = +1")
    return R


def twist_transform(R, t) -> np.ndarray:
    """
    6x6 twist transform ``[[R, -R S(-R^T t)], [0, R]]``.

    Carries a twist expressed in frame B into frame A, where ``p_A = R p_B + t``.
    """
    R = _check_rotation(R)
    t = np.asarray(t, dtype=float)
    H = np.zeros((6, 6))
    H[:3, :3] = R
    H[:3, 3:] = -R @ skew(-R.T @ t)
    H[3:, 3:] = R
    return H


def hand_to_eye_extend(L: np.ndarray, R, t) -> np.ndarray:
    """Extended interaction matrix ``-L H`` for an eye-to-hand camera."""
    return -np.asarray(L) @ twist_transform(R, t)


def truncated_pinv(A: np.ndarray, rtol: float = DEFAULT_PINV_TOLERANCE) -> np.ndarray:
    """Moore-Penrose inverse via SVD, dropping singular values below ``rtol * s_max``."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape)
    keep = s > rtol * s[0]
    if not keep.all():
        logger.warning(
            "Pseudo-inverse truncated %d of %d singular values (condition number %.3e)",
            int((~keep).sum()),
            s.size,
            s[0] / max(s[-1], np.finfo(float).tiny),
        )
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (Vt.T * inv) @ U.T


def _pinv_derivative(A: np.ndarray, A_pinv: np.ndarray, dA: np.ndarray) -> np.ndarray:
    """Derivative of the pseudo-inverse along ``dA`` (constant-rank formula)."""
    m, n = A.shape
    return (
        -A_pinv @ dA @ A_pinv
        + A_pinv @ A_pinv.T @ dA.T @ (np.eye(m) - A @ A_pinv)
        + (np.eye(n) - A_pinv @ A) @ dA.T @ A_pinv.T @ A_pinv
    )


# ============================================
# Filter state and dynamics
# ============================================
@dataclass(frozen=True)
class EkfState:
    """Immutable filter snapshot; every operation returns a new one."""

    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R_meas: np.ndarray
    C: np.ndarray
    dt: float
    focal_length: float
    extrinsic_R: np.ndarray
    extrinsic_t: np.ndarray
    camera_twist: np.ndarray
    v_o: np.ndarray
    depth_rate: float | None = None
    min_depth: float = DEFAULT_MIN_DEPTH
    pinv_tolerance: float = DEFAULT_PINV_TOLERANCE
    timestamp: float = 0.0
    innovation: np.ndarray | None = None
    nis: float | None = None

    @property
    def features(self) -> np.ndarray:
        return self.x[:2]

    @property
    def depth(self) -> float:
        return float(self.x[2])

    @property
    def H(self) -> np.ndarray:
        return twist_transform(self.extrinsic_R, self.extrinsic_t)

    def as_observation(self) -> FeatureObservation:
        return FeatureObservation(
            f_x=float(self.x[0]), f_y=float(self.x[1]), Z=float(self.x[2]), timestamp=self.timestamp
        )


def measurement_matrix(depth_channel: bool) -> np.ndarray:
    """Selector observing (f_x, f_y) and optionally Z."""
    return np.eye(3) if depth_channel else np.eye(3)[:2]


def _arm_twist(state: EkfState, u, J) -> np.ndarray:
    if u is None or J is None:
        return np.zeros(6)
    return state.camera_twist @ np.asarray(J) @ np.asarray(u, dtype=float)


def dynamics(state: EkfState, u=None, J=None) -> np.ndarray:
    """
    Feature and depth rates.

    ``x1_dot = L_g cTr J u - v_o`` and ``x2_dot = L_Zg (cTr J u - L_g^+ v_o)``
    with ``L_g = -L_s H`` and ``L_Zg = -L_Z H``. ``u = None`` is the fixed-camera case.
    """
    f_x, f_y, Z = state.x
    H = state.H
    L_g = -interaction_matrix_point(f_x, f_y, Z, state.focal_length) @ H
    L_Zg = -interaction_matrix_depth(f_x, f_y, Z, state.focal_length) @ H
    w = _arm_twist(state, u, J)
    x1_dot = L_g @ w - state.v_o
    x2_dot = L_Zg @ (w - truncated_pinv(L_g, state.pinv_tolerance) @ state.v_o)
    return np.concatenate([x1_dot, x2_dot])


def dynamics_jacobian(state: EkfState, u=None, J=None) -> np.ndarray:
    """Analytic 3x3 Jacobian of ``dynamics`` with respect to the state."""
    f_x, f_y, Z = state.x
    lam = state.focal_length
    H = state.H
    L_s = interaction_matrix_point(f_x, f_y, Z, lam)
    L_Z = interaction_matrix_depth(f_x, f_y, Z, lam)
    A = -L_s @ H
    A_pinv = truncated_pinv(A, state.pinv_tolerance)
    w = _arm_twist(state, u, J)
    dLs, dLz = _interaction_partials(f_x, f_y, Z, lam)

    F = np.zeros((3, 3))
    for k in range(3):
        dA = -dLs[k] @ H
        F[:2, k] = dA @ w
        dPinv = _pinv_derivative(A, A_pinv, dA)
        F[2, k] = float(
            (-dLz[k] @ H @ (w - A_pinv @ state.v_o))[0] + (L_Z @ H @ dPinv @ state.v_o)[0]
        )
    return F


def _clamp_depth(x: np.ndarray, min_depth: float, log: bool = True) -> np.ndarray:
    if x[2] < min_depth:
        if log:
            logger.warning("Depth estimate %.4f m clamped to %.4f m", x[2], min_depth)
        x = x.copy()
        x[2] = min_depth
    return x


def predict(state: EkfState, u=None, J=None, dt: float | None = None) -> EkfState:
    """
    First-order propagation ``x + f dt`` and ``F P F^T + Q`` with ``F = I + F_bar dt``.

    ``Q`` is added exactly as stored, i.e. already scaled for one filter step.
    """
    dt = state.dt if dt is None else dt
    if not dt > 0.0:
        raise TrackerDomainError(f"dt must be positive, got {dt}")
    F = np.eye(3) + dynamics_jacobian(state, u, J) * dt
    x = state.x + dynamics(state, u, J) * dt
    P = F @ state.P @ F.T + state.Q
    return replace(
        state,
        x=_clamp_depth(x, state.min_depth),
        P=0.5 * (P + P.T),
        timestamp=state.timestamp + dt,
    )


def kalman_update(x, P, y, C, R) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Standard Kalman measurement update for any dimensions.

    Returns:
        ``(x_post, P_post, innovation, innovation_covariance)``.

    Raises:
        InnovationSingularError: If ``C P C^T + R`` cannot be inverted.
    """
    x, P = np.atleast_1d(x).astype(float), np.atleast_2d(P).astype(float)
    C, R = np.atleast_2d(C).astype(float), np.atleast_2d(R).astype(float)
    innovation = np.atleast_1d(y).astype(float) - C @ x
    S = C @ P @ C.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e14:
        raise InnovationSingularError(
            "innovation covariance is singular",
            details={"S": S.tolist()},
        )
    K = np.linalg.solve(S.T, (P @ C.T).T).T
    x_post = x + K @ innovation
    P_post = (np.eye(len(x)) - K @ C) @ P
    return x_post, 0.5 * (P_post + P_post.T), innovation, S


def update(state: EkfState, y) -> EkfState:
    """Kalman update with the state's selector; ``y`` may be a FeatureObservation."""
    if isinstance(y, FeatureObservation):
        y = y.as_array()[: state.C.shape[0]]
    x, P, innovation, S = kalman_update(state.x, state.P, y, state.C, state.R_meas)
    nis = float(innovation @ np.linalg.solve(S, innovation))
    return replace(
        state,
        x=_clamp_depth(x, state.min_depth),
        P=P,
        innovation=innovation,
        nis=nis,
    )


# ============================================
# Empirical rates
# ============================================
def _window_slope(history, window: int, values) -> np.ndarray:
    obs = list(history)[-window:]
    if window < 2 or len(obs) < 2:
        raise TrackerDomainError(f"need at least 2 observations in a window >= 2, got {len(obs)}")
    t = np.array([o.timestamp for o in obs])
    Y = np.array([values(o) for o in obs])
    A = np.column_stack([t - t.mean(), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    return coef[0]


def estimate_feature_velocity(history, window: int = 5) -> np.ndarray:
    """Least-squares slope (px/s) of (f_x, f_y) over the last ``window`` observations."""
    return np.asarray(_window_slope(history, window, lambda o: (o.f_x, o.f_y)), dtype=float)


def estimate_depth_rate(history, window: int = 5) -> float:
    """Least-squares slope (m/s) of depth over the last ``window`` observations."""
    return float(_window_slope(history, window, lambda o: (o.Z,))[0])


# ============================================
# Intercept prediction
# ============================================
@dataclass(frozen=True)
class InterceptPrediction:
    """
    Predicted world intercept point; ``point`` is None when unreachable.

    ``path_times`` and ``path_points`` hold every forecast sample inside the
    reach shell, in time order; the first one is the intercept.
    """

    point: np.ndarray | None
    time: float | None
    stage: int
    innovation_norm: float
    reachable: bool = True
    path_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    path_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))


def _from_forecast(times, points, reach: ReachShell, stage: int, innovation_norm: float) -> InterceptPrediction:
    inside = [i for i, p in enumerate(points) if reach.contains(p)]
    if not inside:
        return InterceptPrediction(
            point=None,
            time=None,
            stage=stage,
            innovation_norm=innovation_norm,
            reachable=False,
        )
    first = inside[0]
    return InterceptPrediction(
        point=np.asarray(points[first], dtype=float),
        time=float(times[first]),
        stage=stage,
        innovation_norm=innovation_norm,
        path_times=np.asarray([times[i] for i in inside], dtype=float),
        path_points=np.asarray([points[i] for i in inside], dtype=float),
    )


def _innovation_norm(state: EkfState) -> float:
    return float(np.linalg.norm(state.innovation)) if state.innovation is not None else 0.0


def predict_intercept(
    state: EkfState,
    cam: CameraModel,
    reach: ReachShell,
    horizon: float,
    stage: int = 1,
    dt: float | None = None,
) -> InterceptPrediction:
    """
    Roll the feature dynamics forward with ``u = 0`` and return the first reachable point.

    When an empirical depth rate is known it drives the depth row during the
    rollout; the features always follow the filter dynamics.

    Args:
        state: Filter snapshot to roll forward.
        cam: Camera used for back-projection.
        reach: Shell of feasible intercepts.
        horizon: Rollout length in seconds.
        stage: Estimation stage recorded on the result.
        dt: Rollout step; the filter step when omitted.
    """
    dt = state.dt if dt is None else dt
    steps = int(np.ceil(horizon / dt - 1e-9))
    current = replace(state, dt=dt)
    times, points = [], []
    for _ in range(steps + 1):
        obs = current.as_observation()
        if obs.Z > current.min_depth:
            times.append(current.timestamp)
            points.append(back_project(cam, obs))
        rate = dynamics(current)
        if current.depth_rate is not None:
            rate[2] = current.depth_rate
        x = _clamp_depth(current.x + rate * dt, current.min_depth, log=False)
        current = replace(current, x=x, timestamp=current.timestamp + dt)
    return _from_forecast(times, points, reach, stage, _innovation_norm(state))


def estimate_world_velocity(history, cam: CameraModel, gravity, window: int = 5) -> np.ndarray:
    """
    Least-squares world velocity (m/s) at the newest observation.

    Back-projects the last ``window`` observations and fits
    ``p(tau) - g tau^2 / 2 = p0 + v tau`` with ``tau`` measured from the newest frame,
    which is exact for drag-free flight under ``gravity``.
    """
    obs = list(history)[-window:]
    if window < 2 or len(obs) < 2:
        raise TrackerDomainError(f"need at least 2 observations in a window >= 2, got {len(obs)}")
    tau = np.array([o.timestamp for o in obs]) - obs[-1].timestamp
    g = np.asarray(gravity, dtype=float)
    P = np.array([back_project(cam, o) for o in obs]) - 0.5 * np.outer(tau**2, g)
    A = np.column_stack([tau, np.ones_like(tau)])
    coef, *_ = np.linalg.lstsq(A, P, rcond=None)
    return coef[0]


def predict_ballistic_intercept(
    state: EkfState,
    history,
    cam: CameraModel,
    reach: ReachShell,
    horizon: float,
    gravity,
    window: int = 5,
    stage: int = 1,
    dt: float | None = None,
    floor_z: float | None = None,
) -> InterceptPrediction:
    """
    Gravity-aware forecast anchored on the filtered ball position.

    The filter estimate is back-projected to a world point, the world velocity
    comes from ``estimate_world_velocity`` and the flight is extrapolated under
    constant ``gravity``. Samples at or below ``floor_z`` end the forecast.
    """
    dt = state.dt if dt is None else dt
    if not dt > 0.0:
        raise TrackerDomainError(f"dt must be positive, got {dt}")
    steps = int(np.ceil(horizon / dt - 1e-9))
    p0 = back_project(cam, state.as_observation())
    v = estimate_world_velocity(history, cam, gravity, window)
    tau = np.arange(steps + 1) * dt
    points = p0 + np.outer(tau, v) + 0.5 * np.outer(tau**2, np.asarray(gravity, dtype=float))
    times = state.timestamp + tau
    if floor_z is not None:
        below = np.flatnonzero(points[:, 2] <= floor_z)
        if below.size:
            times, points = times[: below[0]], points[: below[0]]
    return _from_forecast(list(times), list(points), reach, stage, _innovation_norm(state))


class EkfTracker:
    """
    Stateful wrapper feeding camera frames to the filter in timestamp order.

    Each frame runs predict (fixed camera, ``u = 0``) then update, and refreshes
    the object-motion term from the sliding window: ``v_o`` is the negated
    observed feature slope.
    """

    def __init__(
        self,
        cam: CameraModel,
        depth_channel: bool = True,
        window: int = 5,
        p0_diag=(25.0, 25.0, 0.25),
        q_diag=(1.0, 1.0, 0.01),
        extrinsic_R=np.eye(3),
        extrinsic_t=np.zeros(3),
        min_depth: float = DEFAULT_MIN_DEPTH,
        pinv_tolerance: float = DEFAULT_PINV_TOLERANCE,
    ):
        if window < 2:
            raise TrackerDomainError("window must be >= 2")
        self.cam = cam
        self.depth_channel = depth_channel
        self.window = window
        self.p0_diag = np.asarray(p0_diag, dtype=float)
        self.q_diag = np.asarray(q_diag, dtype=float)
        self.extrinsic_R = _check_rotation(extrinsic_R)
        self.extrinsic_t = np.asarray(extrinsic_t, dtype=float)
        self.min_depth = min_depth
        self.pinv_tolerance = pinv_tolerance
        self.history: deque[FeatureObservation] = deque(maxlen=max(window, 2))
        self.state: EkfState | None = None
        self.stage = 0
        self.frames = 0

    @property
    def started(self) -> bool:
        return self.state is not None

    @property
    def ready(self) -> bool:
        """Enough frames for a velocity window."""
        return self.frames >= self.window

    def _initial_state(self, obs: FeatureObservation) -> EkfState:
        dt = 1.0 / self.cam.frame_rate
        C = measurement_matrix(self.depth_channel)
        pixel_var = max(self.cam.pixel_noise_sigma**2, 1e-6)
        depth_var = max(self.cam.depth_noise_sigma**2, 1e-8)
        R_meas = np.diag([pixel_var, pixel_var, depth_var][: C.shape[0]])
        return EkfState(
            x=_clamp_depth(obs.as_array(), self.min_depth),
            P=np.diag(self.p0_diag),
            Q=np.diag(self.q_diag) * dt,
            R_meas=R_meas,
            C=C,
            dt=dt,
            focal_length=self.cam.focal_length,
            extrinsic_R=self.extrinsic_R,
            extrinsic_t=self.extrinsic_t,
            camera_twist=twist_transform(self.cam.R, self.cam.t),
            v_o=np.zeros(2),
            min_depth=self.min_depth,
            pinv_tolerance=self.pinv_tolerance,
            timestamp=obs.timestamp,
        )

    def observe(self, obs: FeatureObservation) -> EkfState:
        """Fuse one camera frame; the first frame initialises the state."""
        if self.state is not None and obs.timestamp <= self.state.timestamp - 1e-12:
            raise TrackerDomainError(
                f"observation at {obs.timestamp} precedes filter time {self.state.timestamp}"
            )
        if self.state is None:
            self.state = self._initial_state(obs)
        else:
            dt = obs.timestamp - self.state.timestamp
            predicted = predict(self.state, dt=dt) if dt > 0 else self.state
            self.state = update(predicted, obs)
        self.history.append(obs)
        self.frames += 1
        if len(self.history) >= 2:
            v_o = -estimate_feature_velocity(self.history, self.window)
            depth_rate = estimate_depth_rate(self.history, self.window) if self.depth_channel else None
            self.state = replace(self.state, v_o=v_o, depth_rate=depth_rate)
        return self.state

    def intercept(
        self,
        reach: ReachShell,
        horizon: float,
        gravity=None,
        dt: float | None = None,
        floor_z: float | None = None,
    ) -> InterceptPrediction:
        """
        Next-stage intercept estimate from the current state.

        With ``gravity`` the forecast is ballistic in world space
        (``predict_ballistic_intercept``); without it the feature dynamics are
        rolled forward (``predict_intercept``).
        """
        if self.state is None:
            raise TrackerDomainError("tracker has not observed anything yet")
        self.stage += 1
        if gravity is None:
            return predict_intercept(self.state, self.cam, reach, horizon, stage=self.stage, dt=dt)
        return predict_ballistic_intercept(
            self.state,
            self.history,
            self.cam,
            reach,
            horizon,
            gravity,
            window=self.window,
            stage=self.stage,
            dt=dt,
            floor_z=floor_z,
        )


class TrackerDomainError(InterceptError, ValueError):
    """Raised for out-of-domain tracker inputs (non-positive depth, bad rotation, short window)."""

    pass


class InnovationSingularError(NumericalError):
    """Raised when the innovation covariance cannot be inverted."""

    pass
