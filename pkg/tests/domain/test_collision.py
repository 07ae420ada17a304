"""Tests for GJK distance queries."""

import numpy as np
import pytest

from manifold_intercept.domain.collision import (
    DEFAULT_CLEARANCE_SENTINEL,
    Capsule,
    Hull,
    Sphere,
    capsules_clearance,
    gjk_distance,
    min_arm_clearance,
)


def _segment_distance(p1, q1, p2, q2) -> float:
    """Closest distance between two non-degenerate segments (clamped parameters)."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    c, b = d1 @ r, d1 @ d2
    denom = a * e - b * b
    s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0)) if denom > 1e-12 else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t, s = 0.0, float(np.clip(-c / a, 0.0, 1.0))
    elif t > 1.0:
        t, s = 1.0, float(np.clip((b - c) / a, 0.0, 1.0))
    return float(np.linalg.norm(p1 + d1 * s - (p2 + d2 * t)))


class TestSpheres:
    """Tests for sphere pairs."""

    def test_separated_spheres(self):
        """Test distance is centre gap minus radii."""
        result = gjk_distance(Sphere(center=(0, 0, 0), radius=0.5), Sphere(center=(2, 0, 0), radius=0.3))
        assert result.distance == pytest.approx(1.2)
        assert not result.penetrating
        assert result.converged
        np.testing.assert_allclose(result.witness_a, [0.5, 0, 0], atol=1e-9)
        np.testing.assert_allclose(result.witness_b, [1.7, 0, 0], atol=1e-9)

    def test_overlap_reports_zero(self):
        """Test overlapping spheres give distance 0 and flag penetration."""
        result = gjk_distance(Sphere(center=(0, 0, 0), radius=0.5), Sphere(center=(0.6, 0, 0), radius=0.3))
        assert result.distance == 0.0
        assert result.penetrating

    def test_margin_is_subtracted(self):
        """Test the safety margin inflates the shape."""
        result = gjk_distance(
            Sphere(center=(0, 0, 0), radius=0.5, margin=0.1), Sphere(center=(2, 0, 0), radius=0.3)
        )
        assert result.distance == pytest.approx(1.1)

    def test_negative_radius_rejected(self):
        """Test radii must be non-negative."""
        with pytest.raises(ValueError, match="non-negative"):
            Sphere(center=(0, 0, 0), radius=-0.1)


class TestCapsules:
    """Tests for segment-cored shapes."""

    def test_point_beside_segment(self):
        """Test perpendicular distance to the segment interior."""
        seg = Capsule(p0=(0, 0, 0), p1=(1, 0, 0))
        assert gjk_distance(seg, Sphere(center=(0.5, 1.0, 0))).distance == pytest.approx(1.0)

    def test_point_past_endpoint(self):
        """Test distance is measured to the nearest endpoint."""
        seg = Capsule(p0=(0, 0, 0), p1=(1, 0, 0))
        assert gjk_distance(seg, Sphere(center=(2.0, 1.0, 0))).distance == pytest.approx(np.sqrt(2.0))

    def test_segments_match_closed_form(self):
        """Test random segment pairs against the clamped closest-point solution."""
        rng = np.random.default_rng(3)
        for _ in range(50):
            p1, q1, p2, q2 = rng.uniform(-1.0, 1.0, size=(4, 3))
            q2 = q2 + np.array([3.0, 0.0, 0.0])
            p2 = p2 + np.array([3.0, 0.0, 0.0])
            expected = _segment_distance(p1, q1, p2, q2)
            result = gjk_distance(Capsule(p0=p1, p1=q1), Capsule(p0=p2, p1=q2))
            assert result.distance == pytest.approx(expected, abs=1e-6)

    def test_distance_is_symmetric(self):
        """Test swapping arguments does not change the distance."""
        a = Capsule(p0=(0, 0, 0), p1=(0, 0, 1), radius=0.05)
        b = Capsule(p0=(0.5, -1, 0.5), p1=(0.5, 1, 0.5), radius=0.1)
        assert gjk_distance(a, b).distance == pytest.approx(gjk_distance(b, a).distance, abs=1e-9)
        assert gjk_distance(a, b).distance == pytest.approx(0.35, abs=1e-9)

    def test_crossing_capsules_penetrate(self):
        """Test intersecting segments are reported as touching."""
        a = Capsule(p0=(-1, 0, 0), p1=(1, 0, 0), radius=0.05)
        b = Capsule(p0=(0, -1, 0), p1=(0, 1, 0), radius=0.05)
        result = gjk_distance(a, b)
        assert result.distance == 0.0
        assert result.penetrating


class TestHulls:
    """Tests for box hulls."""

    def test_face_distance(self):
        """Test sphere facing a box face."""
        box = Hull.box((0, 0, 0), (1, 1, 1))
        assert gjk_distance(box, Sphere(center=(3, 0, 0), radius=0.5)).distance == pytest.approx(1.5)

    def test_corner_distance(self):
        """Test point off a box corner."""
        box = Hull.box((0, 0, 0), (1, 1, 1))
        result = gjk_distance(box, Sphere(center=(2, 2, 2)))
        assert result.distance == pytest.approx(np.sqrt(3.0), abs=1e-9)
        np.testing.assert_allclose(result.witness_a, [1, 1, 1], atol=1e-9)

    def test_point_inside_box(self):
        """Test a contained point penetrates."""
        assert gjk_distance(Hull.box((0, 0, 0), (1, 1, 1)), Sphere(center=(0.2, 0.1, 0))).penetrating

    def test_empty_hull_rejected(self):
        """Test a hull needs 3-D vertices."""
        with pytest.raises(ValueError, match="3-D vertex"):
            Hull(vertices=np.zeros((2, 2)))


class TestClearance:
    """Tests for arm clearance helpers."""

    def test_no_obstacles_gives_sentinel(self, planar_arm):
        """Test an empty world reports the sentinel."""
        assert min_arm_clearance(planar_arm, np.zeros(2), []) == DEFAULT_CLEARANCE_SENTINEL

    def test_planar_arm_clearance(self, planar_arm):
        """Test clearance to a sphere above the stretched arm."""
        sphere = Sphere(center=(1.0, 0.5, 0.0), radius=0.1)
        assert min_arm_clearance(planar_arm, np.zeros(2), [sphere]) == pytest.approx(0.35, abs=1e-9)

    def test_minimum_over_pairs(self):
        """Test the nearest pair wins and contact short-circuits to 0."""
        caps = [Capsule(p0=(0, 0, 0), p1=(1, 0, 0)), Capsule(p0=(0, 0, 1), p1=(1, 0, 1))]
        near = Sphere(center=(0.5, 0, 1.2), radius=0.1)
        far = Sphere(center=(5, 0, 0))
        assert capsules_clearance(caps, [far, near]) == pytest.approx(0.1, abs=1e-9)
        touching = Sphere(center=(0.5, 0, 0.05), radius=0.1)
        assert capsules_clearance(caps, [far, touching]) == 0.0
