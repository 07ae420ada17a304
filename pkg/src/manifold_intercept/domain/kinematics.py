"""Serial-arm kinematics over modified-DH parameters."""

import numpy as np
from scipy.spatial.transform import Rotation

from manifold_intercept.domain.collision import Capsule
from manifold_intercept.domain.value_objects import ArmModel, DhRow, EePose
from manifold_intercept.errors import ConfigError

LIMIT_SLACK = 1e-12


def dh_transform(row: DhRow, theta: float = 0.0) -> np.ndarray:
    """Homogeneous transform of one modified-DH row at joint angle ``theta``."""
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    angle = (theta if row.revolute else 0.0) + row.offset
    ct, st = np.cos(angle), np.sin(angle)
    return np.array(
        [
            [ct, -st, 0.0, row.a],
            [st * ca, ct * ca, -sa, -row.d * sa],
            [st * sa, ct * sa, ca, row.d * ca],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def check_limits(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """
    Validate a joint vector against the model.

    Args:
        model: Arm description.
        q: Joint angles in radians.

    Returns:
        The joint vector as a float array.

    Raises:
        JointLimitError: If the size is wrong or any joint leaves its interval.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_joints,):
        raise JointLimitError(f"expected {model.n_joints} joints, got shape {q.shape}")
    limits = model.limits
    below = q < limits[:, 0] - LIMIT_SLACK
    above = q > limits[:, 1] + LIMIT_SLACK
    if below.any() or above.any():
        bad = int(np.flatnonzero(below | above)[0])
        raise JointLimitError(
            f"joint {bad} = {q[bad]:.6f} rad outside [{limits[bad, 0]}, {limits[bad, 1]}]",
            joint=bad,
        )
    return q


def frame_transforms(model: ArmModel, q: np.ndarray) -> list[np.ndarray]:
    """Cumulative base-frame transforms of every frame, base first, flange last."""
    q = check_limits(model, q)
    frames = [np.eye(4)]
    j = 0
    for row in model.dh_rows:
        theta = 0.0
        if row.revolute:
            theta = q[j]
            j += 1
        frames.append(frames[-1] @ dh_transform(row, theta))
    return frames


def rotation_to_quaternion(R: np.ndarray) -> tuple[float, float, float, float]:
    """Unit quaternion (x, y, z, w) with w >= 0."""
    quat = Rotation.from_matrix(R).as_quat()
    if quat[3] < 0:
        quat = -quat
    quat = quat / np.linalg.norm(quat)
    return tuple(float(c) for c in quat)


def forward_kinematics(model: ArmModel, q: np.ndarray) -> EePose:
    """
    End-effector pose by chaining the DH transforms.

    Args:
        model: Arm description.
        q: Joint angles within limits.

    Returns:
        Flange pose in the base frame.

    Raises:
        JointLimitError: If ``q`` violates the model limits.
    """
    T = frame_transforms(model, q)[-1]
    return EePose(
        position=tuple(float(c) for c in T[:3, 3]),
        orientation=rotation_to_quaternion(T[:3, :3]),
    )


def geometric_jacobian(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """
    Geometric Jacobian of the flange.

    Column i is ``(z_i x (p_ee - p_i); z_i)`` for revolute joint i, where
    ``z_i``/``p_i`` are the axis and origin of the frame the joint rotates.

    Returns:
        6 x n matrix, linear rows first.
    """
    frames = frame_transforms(model, q)
    p_ee = frames[-1][:3, 3]
    columns = []
    for k, row in enumerate(model.dh_rows):
        if not row.revolute:
            continue
        T = frames[k + 1]
        z, p = T[:3, 2], T[:3, 3]
        columns.append(np.concatenate([np.cross(z, p_ee - p), z]))
    return np.column_stack(columns)


def sample_random_config(
    model: ArmModel,
    rng_seed: int | np.random.Generator | None = None,
) -> np.ndarray:
    """Uniform joint vector inside the limits, reproducible per seed."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    limits = model.limits
    return rng.uniform(limits[:, 0], limits[:, 1])


def link_capsules_world(model: ArmModel, q: np.ndarray) -> list[Capsule]:
    """Every link capsule transformed by the cumulative transform of its frame."""
    frames = frame_transforms(model, q)
    capsules = []
    for shape in model.link_shapes:
        T = frames[shape.frame]
        R, t = T[:3, :3], T[:3, 3]
        capsules.append(
            Capsule(
                p0=R @ np.asarray(shape.p0) + t,
                p1=R @ np.asarray(shape.p1) + t,
                radius=shape.radius,
            )
        )
    return capsules


def end_effector_position(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Flange position only, skipping the quaternion conversion."""
    return frame_transforms(model, q)[-1][:3, 3].copy()


class JointLimitError(ConfigError, ValueError):
    """Raised when a joint vector leaves the model's limits."""

    def __init__(self, message: str, joint: int | None = None):
        super().__init__(message)
        self.joint = joint
