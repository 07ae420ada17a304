"""High-dimensional arm/obstacle samples, their scaling and the end-effector k-d tree."""

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from manifold_intercept.domain.collision import Sphere, min_arm_clearance
from manifold_intercept.domain.kinematics import forward_kinematics, sample_random_config
from manifold_intercept.domain.value_objects import ArmModel, EePose
from manifold_intercept.errors import InterceptError

logger = logging.getLogger(__name__)

JOINT_COLUMNS = tuple(f"theta_{i}" for i in range(7))
EE_COLUMNS = ("ee_x", "ee_y", "ee_z", "ee_qx", "ee_qy", "ee_qz", "ee_qw")
OBSTACLE_COLUMNS = ("obs_x", "obs_y", "obs_z")
COLUMN_NAMES = (*JOINT_COLUMNS, *EE_COLUMNS, *OBSTACLE_COLUMNS, "collision")
SAMPLE_WIDTH = len(COLUMN_NAMES)

# Column slices inside the 17 kernel features (collision excluded).
QUATERNION_FEATURES = slice(10, 14)


@dataclass(frozen=True)
class Sample:
    """One 18-value sample: joints, end-effector pose, obstacle point and collision flag."""

    theta: np.ndarray
    ee: EePose
    obstacle: np.ndarray
    collision: bool

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.theta, self.ee.as_array(), self.obstacle, [1.0 if self.collision else 0.0]]
        )


@dataclass(frozen=True)
class FeatureScaling:
    """Per-column affine normalisation of the 17 kernel features."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureScaling":
        """
        Standardise each column; the quaternion block shares one scale.

        Constant columns keep scale 1 so they contribute nothing to distances.
        """
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        quat_var = float(np.mean(features[:, QUATERNION_FEATURES].var(axis=0)))
        std[QUATERNION_FEATURES] = np.sqrt(quat_var)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean=mean, scale=std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureScaling":
        return cls(mean=np.asarray(data["mean"], dtype=float), scale=np.asarray(data["scale"], dtype=float))


@dataclass(frozen=True)
class Dataset:
    """
    Ordered samples stored column-wise.

    Row index is the permanent identity shared by embedding, graph and decoder.
    """

    values: np.ndarray
    scaling: FeatureScaling
    seed: int | None = None
    arm_model_hash: str = ""
    margin: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != SAMPLE_WIDTH:
            raise ValueError(f"dataset rows must have {SAMPLE_WIDTH} values, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values: np.ndarray, **kwargs) -> "Dataset":
        """Build a dataset and fit its scaling from raw rows."""
        values = np.asarray(values, dtype=float)
        return cls(values=values, scaling=FeatureScaling.fit(values[:, :-1]), **kwargs)

    @classmethod
    def from_samples(cls, samples: list[Sample], **kwargs) -> "Dataset":
        return cls.from_values(np.array([s.flatten() for s in samples]), **kwargs)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return self.values[:, :7]

    @property
    def ee(self) -> np.ndarray:
        return self.values[:, 7:14]

    @property
    def ee_position(self) -> np.ndarray:
        return self.values[:, 7:10]

    @property
    def obstacle(self) -> np.ndarray:
        return self.values[:, 14:17]

    @property
    def collision(self) -> np.ndarray:
        return self.values[:, 17] > 0.5

    @property
    def safe_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.collision)

    def features(self) -> np.ndarray:
        """Scaled kernel features; the collision flag is left out."""
        return self.scaling.apply(self.values[:, :-1])

    def sample(self, i: int) -> Sample:
        row = self.values[i]
        return Sample(
            theta=row[:7].copy(),
            ee=EePose(position=tuple(row[7:10]), orientation=tuple(row[10:14])),
            obstacle=row[14:17].copy(),
            collision=bool(row[17] > 0.5),
        )

    def content_hash(self) -> str:
        """SHA-256 over the raw little-endian rows and the labelling context."""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        digest.update(f"{self.arm_model_hash}|{self.margin!r}".encode())
        return digest.hexdigest()


def label_collision(model: ArmModel, theta: np.ndarray, obstacle: np.ndarray, margin: float) -> bool:
    """Whether a point obstacle inflated by ``margin`` touches any link capsule."""
    return min_arm_clearance(model, theta, [Sphere(center=obstacle, margin=margin)]) <= 0.0


def _make_sample(
    model: ArmModel,
    index: int,
    seed: int,
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    margin: float,
) -> Sample:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    theta = sample_random_config(model, rng)
    obstacle = rng.uniform(box_lo, box_hi)
    return Sample(
        theta=theta,
        ee=forward_kinematics(model, theta),
        obstacle=obstacle,
        collision=label_collision(model, theta, obstacle, margin),
    )


def _generate_chunk(model, indices, seed, box_lo, box_hi, margin) -> np.ndarray:
    return np.array([_make_sample(model, i, seed, box_lo, box_hi, margin).flatten() for i in indices])


def generate(
    model: ArmModel,
    n: int,
    obstacle_box: tuple,
    seed: int,
    margin: float = 0.05,
    workers: int = 1,
) -> Dataset:
    """
    Sample random valid joints, a random obstacle point per sample, and label collisions.

    Each sample draws from its own seed derived from ``(seed, index)``, so the result
    does not depend on ``workers``.

    Args:
        model: Arm description.
        n: Number of samples.
        obstacle_box: ``(lo, hi)`` corners of the obstacle sampling box (m).
        seed: Master seed.
        margin: Safety barrier added to the point obstacle (m).
        workers: Process count; 1 runs inline.

    Returns:
        The labelled dataset with fitted scaling.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    box_lo, box_hi = (np.asarray(c, dtype=float) for c in obstacle_box)
    if box_lo.shape != (3,) or not (box_hi > box_lo).all():
        raise ValueError(f"degenerate obstacle box {box_lo} .. {box_hi}")

    chunks = np.array_split(np.arange(n), max(1, min(workers, n)))
    if workers <= 1:
        blocks = [_generate_chunk(model, c, seed, box_lo, box_hi, margin) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_generate_chunk, model, c, seed, box_lo, box_hi, margin) for c in chunks
            ]
            blocks = [f.result() for f in futures]
    values = np.vstack(blocks)

    dataset = Dataset.from_values(
        values,
        seed=seed,
        arm_model_hash=model.model_hash(),
        margin=margin,
        metadata={"obstacle_box": [box_lo.tolist(), box_hi.tolist()]},
    )
    logger.info(
        "Generated %d samples (%d colliding, %.1f%%) with seed %d",
        n,
        int(dataset.collision.sum()),
        100.0 * dataset.collision.mean(),
        seed,
    )
    return dataset


class EeKdTree:
    """Balanced k-d tree over end-effector positions with sample-index payloads."""

    def __init__(self, positions: np.ndarray, indices: np.ndarray | None = None):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.indices = (
            np.arange(len(positions)) if indices is None else np.asarray(indices, dtype=int)
        )
        self.positions = positions
        self._tree = cKDTree(positions) if len(positions) else None

    @classmethod
    def from_dataset(cls, ds: Dataset, indices=None) -> "EeKdTree":
        """Index all samples, or only ``indices`` (e.g. routable graph nodes)."""
        if indices is None:
            return cls(ds.ee_position)
        indices = np.asarray(indices, dtype=int)
        return cls(ds.ee_position[indices], indices)

    def __len__(self) -> int:
        return len(self.indices)


def nearest_ee(tree: EeKdTree, p) -> tuple[int, float]:
    """
    Exact nearest indexed end-effector position.

    Ties resolve to the lowest sample index.

    Raises:
        EmptyTreeError: If the tree holds no points.
    """
    if tree._tree is None:
        raise EmptyTreeError("cannot query an empty end-effector tree")
    p = np.asarray(p, dtype=float)
    best, _ = tree._tree.query(p, k=1)
    candidates = tree._tree.query_ball_point(p, r=best * (1.0 + 1e-12) + 1e-15)
    dists = np.linalg.norm(tree.positions[candidates] - p, axis=1)
    d_min = dists.min()
    tied = [tree.indices[c] for c, d in zip(candidates, dists) if d <= d_min]
    return int(min(tied)), float(d_min)


class EmptyTreeError(InterceptError):
    """Raised when querying a k-d tree with no points."""

    pass
