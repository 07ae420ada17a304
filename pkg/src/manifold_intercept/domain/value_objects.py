"""Value objects for arms, sensors, scenarios and events."""

import hashlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vec3 = tuple[float, float, float]


class EventType(str, Enum):
    """Scenario trace events."""

    TRIGGER = "TRIGGER"
    PREDICT = "PREDICT"
    REPREDICT = "REPREDICT"
    REROUTE = "REROUTE"
    BLOCKED = "BLOCKED"
    UNREACHABLE = "UNREACHABLE"
    CATCH = "CATCH"
    MISS = "MISS"


class ShapeKind(str, Enum):
    """Convex obstacle primitives."""

    SPHERE = "sphere"
    CAPSULE = "capsule"
    BOX = "box"


# ============================================
# Arm model
# ============================================
class DhRow(BaseModel):
    """One modified-DH row: RotX(alpha) TransX(a) RotZ(theta + offset) TransZ(d)."""

    model_config = ConfigDict(frozen=True)

    a: float
    d: float
    alpha: float
    offset: float = 0.0
    revolute: bool = True


class CapsuleSpec(BaseModel):
    """Sphere-swept segment rigidly attached to a kinematic frame (0 = base)."""

    model_config = ConfigDict(frozen=True)

    frame: int = Field(ge=0)
    p0: Vec3
    p1: Vec3
    radius: float = Field(gt=0.0)


class ArmModel(BaseModel):
    """
    Serial arm described by modified-DH rows, joint limits and link capsules.

    Frame ``k`` is the frame reached after applying the first ``k`` rows, so
    frame 0 is the fixed base and the last frame is the flange.
    """

    model_config = ConfigDict(frozen=True)

    name: str = "arm"
    dh_rows: list[DhRow]
    joint_limits: list[tuple[float, float]]
    link_shapes: list[CapsuleSpec]

    @model_validator(mode="after")
    def validate_structure(self) -> "ArmModel":
        """Check limits match revolute rows and capsules reference real frames."""
        n_revolute = sum(1 for row in self.dh_rows if row.revolute)
        if len(self.joint_limits) != n_revolute:
            raise ValueError(
                f"{n_revolute} revolute rows but {len(self.joint_limits)} joint limits"
            )
        for i, (lo, hi) in enumerate(self.joint_limits):
            if not lo < hi:
                raise ValueError(f"joint {i} limit lo={lo} must be below hi={hi}")
        for shape in self.link_shapes:
            if shape.frame > len(self.dh_rows):
                raise ValueError(
                    f"capsule frame {shape.frame} exceeds {len(self.dh_rows)} DH rows"
                )
        return self

    @property
    def n_joints(self) -> int:
        """Number of actuated joints."""
        return len(self.joint_limits)

    @property
    def limits(self) -> np.ndarray:
        """Joint limits as an (n, 2) array."""
        return np.asarray(self.joint_limits, dtype=float)

    def model_hash(self) -> str:
        """Content hash used to tie datasets to the arm they were sampled from."""
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()

    @classmethod
    def from_json_file(cls, path: Path) -> "ArmModel":
        """Load an arm model from a JSON config file."""
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


class EePose(BaseModel):
    """End-effector pose: base-frame position and unit quaternion (x, y, z, w)."""

    model_config = ConfigDict(frozen=True)

    position: Vec3
    orientation: tuple[float, float, float, float]

    @field_validator("orientation")
    @classmethod
    def validate_unit_quaternion(cls, v: tuple[float, float, float, float]):
        """Quaternion must be unit norm."""
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm must be 1, got {norm}")
        return v

    def as_array(self) -> np.ndarray:
        """Seven values: x, y, z, qx, qy, qz, qw."""
        return np.array([*self.position, *self.orientation], dtype=float)


# ============================================
# World
# ============================================
class BallState(BaseModel):
    """Ballistic ball truth."""

    model_config = ConfigDict(frozen=True)

    position: Vec3
    velocity: Vec3
    radius: float = Field(default=0.035, gt=0.0)


class CameraModel(BaseModel):
    """
    Fixed pinhole camera.

    ``rotation`` and ``translation`` map world points into the camera frame:
    ``p_cam = R p_world + t``. Features are principal-point-centred pixels.
    """

    model_config = ConfigDict(frozen=True)

    focal_length: float = Field(gt=0.0, description="lambda, in pixels")
    principal_point: tuple[float, float] = (320.0, 240.0)
    rotation: tuple[Vec3, Vec3, Vec3] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    translation: Vec3 = (0.0, 0.0, 0.0)
    pixel_noise_sigma: float = Field(default=0.0, ge=0.0)
    depth_noise_sigma: float = Field(default=0.0, ge=0.0)
    frame_rate: float = Field(default=30.0, gt=0.0)

    @field_validator("rotation")
    @classmethod
    def validate_rotation(cls, v):
        """Rotation must be orthonormal with determinant +1."""
        R = np.asarray(v, dtype=float)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ValueError("camera rotation must be orthonormal with det = +1")
        return v

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=float)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=float)

    @classmethod
    def looking_at(
        cls,
        eye: Vec3,
        target: Vec3,
        up: Vec3 = (0.0, 0.0, 1.0),
        **kwargs,
    ) -> "CameraModel":
        """Build a camera at ``eye`` whose optical axis (+z) points at ``target``."""
        eye_v = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye_v
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, np.array([1.0, 0.0, 0.0]))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.vstack([x, y, z])
        t = -R @ eye_v
        return cls(
            rotation=tuple(tuple(float(c) for c in row) for row in R),
            translation=tuple(float(c) for c in t),
            **kwargs,
        )


@dataclass(frozen=True)
class FeatureObservation:
    """Image feature of the ball: centred pixels plus depth along camera z."""

    f_x: float
    f_y: float
    Z: float
    timestamp: float

    def as_array(self) -> np.ndarray:
        return np.array([self.f_x, self.f_y, self.Z], dtype=float)


class ObstacleShape(BaseModel):
    """Obstacle geometry in its own frame, centred on the scripted position."""

    model_config = ConfigDict(frozen=True)

    kind: ShapeKind = ShapeKind.SPHERE
    radius: float = Field(default=0.0, ge=0.0)
    segment: tuple[Vec3, Vec3] = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    half_extents: Vec3 = (0.0, 0.0, 0.0)
    margin: float = Field(default=0.0, ge=0.0)


class Waypoint(BaseModel):
    """Timed obstacle position."""

    model_config = ConfigDict(frozen=True)

    time: float
    position: Vec3


class ObstacleScript(BaseModel):
    """Obstacle moving piecewise-linearly through timed waypoints."""

    model_config = ConfigDict(frozen=True)

    name: str = "obstacle"
    shape: ObstacleShape
    waypoints: list[Waypoint] = Field(min_length=1)

    @field_validator("waypoints")
    @classmethod
    def validate_times(cls, v: list[Waypoint]) -> list[Waypoint]:
        """Waypoint times must strictly increase."""
        for prev, nxt in zip(v, v[1:]):
            if not nxt.time > prev.time:
                raise ValueError("waypoint times must be strictly increasing")
        return v


class TriggerSphere(BaseModel):
    """Region whose entry by the ball starts target estimation."""

    model_config = ConfigDict(frozen=True)

    center: Vec3 = (0.0, 0.0, 0.4)
    radius: float = Field(default=1.5, gt=0.0)


class ReachShell(BaseModel):
    """Spherical shell around the arm base where intercepts are feasible."""

    model_config = ConfigDict(frozen=True)

    center: Vec3 = (0.0, 0.0, 0.333)
    inner_radius: float = Field(default=0.25, ge=0.0)
    outer_radius: float = Field(default=0.8, gt=0.0)

    @model_validator(mode="after")
    def validate_radii(self) -> "ReachShell":
        if self.outer_radius <= self.inner_radius:
            raise ValueError("outer_radius must exceed inner_radius")
        return self

    def contains(self, p: np.ndarray) -> bool:
        """Whether a world point lies inside the shell."""
        r = float(np.linalg.norm(np.asarray(p) - np.asarray(self.center)))
        return self.inner_radius <= r <= self.outer_radius


class Scenario(BaseModel):
    """World script for one interception run."""

    model_config = ConfigDict(frozen=True)

    name: str = "scenario"
    duration: float = Field(default=3.0, gt=0.0)
    gravity: Vec3 = (0.0, 0.0, -9.81)
    floor_z: float = 0.0
    ball: BallState
    camera: CameraModel
    obstacles: list[ObstacleScript] = Field(default_factory=list)
    trigger: TriggerSphere = Field(default_factory=TriggerSphere)
    reach: ReachShell = Field(default_factory=ReachShell)
    start_joints: list[float] | None = None
    noise_seed: int = 0
    throw_jitter: float = Field(default=0.0, ge=0.0, description="Seeded velocity sigma (m/s)")
    depth_channel: bool = True
    extrinsic_rotation: tuple[Vec3, Vec3, Vec3] = (
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (0.0, 0.0, 1.0),
    )
    extrinsic_translation: Vec3 = (0.0, 0.0, 0.0)

    @classmethod
    def from_json_file(cls, path: Path) -> "Scenario":
        """Load a scenario from JSON."""
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


class ScenarioConfig(BaseModel):
    """Everything one closed-loop run needs: artifact files, world, timing, seeds."""

    model_config = ConfigDict(frozen=True)

    dataset_path: Path
    embedding_path: Path
    graph_path: Path
    decoder_path: Path | None = None
    arm_model_path: Path | None = None
    scenario: Scenario
    tick: float = Field(default=1.0 / 30.0, gt=0.0)
    catch_tolerance: float = Field(default=0.10, gt=0.0)
    substeps: int = Field(default=4, ge=1)
    interpolation: Literal["joint", "decoder"] = "joint"
    adaptive: bool = True
    seed: int = 0
