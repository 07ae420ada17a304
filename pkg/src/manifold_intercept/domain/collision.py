"""GJK distance queries between sphere-swept convex shapes."""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from itertools import combinations
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from manifold_intercept.domain.value_objects import ArmModel

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 64
DEFAULT_TOLERANCE = 1e-9
DEFAULT_CLEARANCE_SENTINEL = 1.0e3


class ConvexShape(ABC):
    """
    Convex core swept by a sphere of radius ``radius + margin``.

    New primitives only implement ``core_support`` and ``core_center``.
    """

    radius: float
    margin: float

    @abstractmethod
    def core_support(self, direction: np.ndarray) -> np.ndarray:
        """Point of the core furthest along ``direction``."""

    @abstractmethod
    def core_center(self) -> np.ndarray:
        """Any interior point of the core."""

    @property
    def inflation(self) -> float:
        return self.radius + self.margin


@dataclass(frozen=True)
class Sphere(ConvexShape):
    """Point core."""

    center: np.ndarray
    radius: float = 0.0
    margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        _check_radii(self.radius, self.margin)

    def core_support(self, direction: np.ndarray) -> np.ndarray:
        return self.center

    def core_center(self) -> np.ndarray:
        return self.center


@dataclass(frozen=True)
class Capsule(ConvexShape):
    """Segment core."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float = 0.0
    margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))
        _check_radii(self.radius, self.margin)

    def core_support(self, direction: np.ndarray) -> np.ndarray:
        return self.p0 if self.p0 @ direction >= self.p1 @ direction else self.p1

    def core_center(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))


@dataclass(frozen=True)
class Hull(ConvexShape):
    """Convex hull of a vertex cloud."""

    vertices: np.ndarray
    radius: float = 0.0
    margin: float = 0.0

    def __post_init__(self):
        vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if vertices.shape[0] < 1 or vertices.shape[1] != 3:
            raise ValueError("hull needs at least one 3-D vertex")
        object.__setattr__(self, "vertices", vertices)
        _check_radii(self.radius, self.margin)

    def core_support(self, direction: np.ndarray) -> np.ndarray:
        return self.vertices[int(np.argmax(self.vertices @ direction))]

    def core_center(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @classmethod
    def box(cls, center, half_extents, margin: float = 0.0) -> "Hull":
        """Axis-aligned box as an eight-vertex hull."""
        c = np.asarray(center, dtype=float)
        h = np.asarray(half_extents, dtype=float)
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return cls(vertices=c + signs * h, margin=margin)


def _check_radii(radius: float, margin: float) -> None:
    if radius < 0 or margin < 0:
        raise ValueError("radius and margin must be non-negative")


@dataclass(frozen=True)
class DistanceResult:
    """Separation between two shapes; penetration is reported as distance 0."""

    distance: float
    witness_a: np.ndarray
    witness_b: np.ndarray
    iterations: int
    penetrating: bool
    converged: bool = True
    core_distance: float = field(default=0.0, compare=False)


def _affine_weights(points: np.ndarray) -> np.ndarray | None:
    """Barycentric weights of the origin's projection onto the affine hull."""
    if len(points) == 1:
        return np.ones(1)
    base = points[0]
    edges = points[1:] - base
    gram = edges @ edges.T
    scale = np.trace(gram)
    if scale <= 0.0 or abs(np.linalg.det(gram)) <= 1e-14 * scale ** len(edges):
        return None
    mu = np.linalg.solve(gram, -edges @ base)
    return np.concatenate([[1.0 - mu.sum()], mu])


def _closest_on_simplex(points: np.ndarray) -> tuple[np.ndarray, tuple[int, ...], np.ndarray]:
    """Closest point to the origin on conv(points), its support set and weights."""
    best: tuple[float, tuple[int, ...], np.ndarray] | None = None
    for size in range(1, len(points) + 1):
        for idx in combinations(range(len(points)), size):
            weights = _affine_weights(points[list(idx)])
            if weights is None or (weights < -1e-12).any():
                continue
            p = weights @ points[list(idx)]
            d2 = float(p @ p)
            if best is None or d2 < best[0] - 1e-24:
                best = (d2, idx, weights)
    assert best is not None  # singletons are always valid
    _, idx, weights = best
    return weights @ points[list(idx)], idx, weights


def gjk_distance(
    a: ConvexShape,
    b: ConvexShape,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> DistanceResult:
    """
    Distance between two convex shapes via GJK on their cores.

    The cores' separation is found on the Minkowski difference ``A - B``;
    radii and margins are subtracted afterwards and the result floored at 0.

    Args:
        a: First shape.
        b: Second shape.
        max_iterations: Iteration cap.
        tolerance: Stop when the duality gap on the core distance is below this (m).

    Returns:
        DistanceResult with witness points on each inflated surface.
    """
    direction = b.core_center() - a.core_center()
    if direction @ direction < 1e-24:
        direction = np.array([1.0, 0.0, 0.0])

    pa, pb = a.core_support(direction), b.core_support(-direction)
    supports_a = [pa]
    supports_b = [pb]
    weights = np.ones(1)
    v = pa - pb
    iterations = 0
    converged = False
    touching = False

    while iterations < max_iterations:
        v_norm = float(np.linalg.norm(v))
        if v_norm <= 1e-12:
            touching = True
            converged = True
            break
        sa, sb = a.core_support(-v), b.core_support(v)
        w = sa - sb
        if v_norm - float(v @ w) / v_norm <= tolerance:
            converged = True
            break
        if any(np.allclose(sa, xa) and np.allclose(sb, xb) for xa, xb in zip(supports_a, supports_b)):
            converged = True
            break
        supports_a.append(sa)
        supports_b.append(sb)
        W = np.array(supports_a) - np.array(supports_b)
        v, idx, weights = _closest_on_simplex(W)
        supports_a = [supports_a[i] for i in idx]
        supports_b = [supports_b[i] for i in idx]
        iterations += 1

    core_a = weights @ np.array(supports_a)
    core_b = weights @ np.array(supports_b)
    core_distance = 0.0 if touching else float(np.linalg.norm(v))
    if not converged:
        logger.warning(
            "GJK hit %d iterations without converging; best core distance bound %.3e m",
            max_iterations,
            core_distance,
        )

    gap = core_distance - a.inflation - b.inflation
    if core_distance > 0.0:
        n = (core_a - core_b) / core_distance
    else:
        n = np.zeros(3)
    return DistanceResult(
        distance=max(0.0, gap),
        witness_a=core_a - a.inflation * n,
        witness_b=core_b + b.inflation * n,
        iterations=iterations,
        penetrating=gap <= 0.0,
        converged=converged,
        core_distance=core_distance,
    )


def capsules_clearance(
    capsules: list[Capsule],
    obstacles: list[ConvexShape],
    sentinel: float = DEFAULT_CLEARANCE_SENTINEL,
) -> float:
    """Minimum distance between any capsule and any obstacle; ``sentinel`` if none."""
    best = sentinel
    for obstacle in obstacles:
        for capsule in capsules:
            result = gjk_distance(capsule, obstacle)
            if result.distance < best:
                best = result.distance
                if best <= 0.0:
                    return 0.0
    return best


def min_arm_clearance(
    model: "ArmModel",
    q: np.ndarray,
    obstacles: list[ConvexShape],
    sentinel: float = DEFAULT_CLEARANCE_SENTINEL,
) -> float:
    """
    Minimum GJK distance over all (link capsule, obstacle) pairs.

    Args:
        model: Arm description.
        q: Joint vector within limits.
        obstacles: World-frame obstacle shapes (margins included).
        sentinel: Value reported when there are no obstacles.

    Returns:
        Clearance in meters; 0 means penetration.
    """
    from manifold_intercept.domain.kinematics import link_capsules_world

    if not obstacles:
        return sentinel
    return capsules_clearance(link_capsules_world(model, q), obstacles, sentinel)
