import math

import numpy as np
import pytest
import shapely
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import LineString, Point, Polygon

from entinav import geometry
from entinav.errors import InputError

SQUARE = geometry.as_polygon([(0, 0), (4, 0), (4, 4), (0, 4)])
L_SHAPE = geometry.as_polygon([(0, 0), (3, 0), (3, 1), (1, 1), (1, 3), (0, 3)])


def random_star(rng, n=7, center=(0, 0)):
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = rng.uniform(0.5, 2.0, n)
    return geometry.as_polygon(np.c_[center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)])


def test_as_polygon_validation():
    with pytest.raises(InputError):
        geometry.as_polygon([(0, 0), (1, 1)])
    with pytest.raises(InputError):
        geometry.as_polygon([(0, 0), (1, math.nan), (1, 1)])


def test_simplicity():
    assert geometry.is_simple(SQUARE)
    assert geometry.is_simple(L_SHAPE)
    assert not geometry.is_simple(geometry.as_polygon([(0, 0), (2, 2), (2, 0), (0, 2)]))
    assert not geometry.is_simple(geometry.as_polygon([(0, 0), (1, 1), (2, 2)]))


def test_boundary_is_outside():
    assert geometry.point_in_polygon((2, 2), SQUARE)
    assert not geometry.point_in_polygon((0, 2), SQUARE)
    assert not geometry.point_in_polygon((4, 4), SQUARE)
    assert not geometry.points_in_polygon([(2, 0), (0, 0)], SQUARE).any()


def test_point_in_polygon_matches_shapely():
    rng = np.random.default_rng(0)
    for _ in range(20):
        poly = random_star(rng)
        ref = Polygon(poly)
        pts = rng.uniform(-2.5, 2.5, (200, 2))
        expected = np.array([ref.contains(Point(p)) for p in pts])
        assert (geometry.points_in_polygon(pts, poly) == expected).all()
        assert [geometry.point_in_polygon(p, poly) for p in pts[:30]] == expected[:30].tolist()


def test_distances_match_shapely():
    rng = np.random.default_rng(1)
    poly = random_star(rng, 9)
    ring = Polygon(poly).exterior
    pts = rng.uniform(-3, 3, (100, 2))
    got = geometry.boundary_distances(pts, poly)
    expected = [ring.distance(Point(p)) for p in pts]
    assert got == pytest.approx(expected, abs=1e-12)
    for p in pts[:20]:
        q, _ = geometry.closest_boundary_point(p, poly)
        assert math.dist(p, q) == pytest.approx(ring.distance(Point(p)), abs=1e-12)


def test_signed_clearance():
    assert geometry.polygon_clearance((2, 1), SQUARE) == pytest.approx(-1)
    assert geometry.polygon_clearance((6, 2), SQUARE) == pytest.approx(2)


def test_segment_polygon_clearance_matches_shapely():
    rng = np.random.default_rng(2)
    poly = random_star(rng, 8)
    ref = Polygon(poly)
    for _ in range(100):
        a, b = rng.uniform(-4, 4, (2, 2))
        assert geometry.segment_polygon_clearance(a, b, poly) == pytest.approx(ref.distance(LineString([a, b])),
                                                                              abs=1e-9)


def test_segment_crossing():
    p = geometry.segment_crossing((-1, 2), (2, 2), SQUARE)
    assert p == pytest.approx((0, 2))
    assert geometry.segment_crossing((5, 5), (6, 6), SQUARE) is None


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 2 * math.pi), st.floats(-10, 10), st.floats(-10, 10))
def test_containment_invariant_under_rigid_motion(px, py, theta, tx, ty):
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    moved = geometry.as_polygon(L_SHAPE @ rot.T + (tx, ty))
    p = np.array([px, py])
    # keep away from the boundary so rounding cannot flip the answer
    if geometry.boundary_distance(p, L_SHAPE) < 1e-6:
        return
    assert geometry.point_in_polygon(p, L_SHAPE) == geometry.point_in_polygon(rot @ p + (tx, ty), moved)


def test_signed_area_orientation():
    assert geometry.signed_area(SQUARE) == pytest.approx(16)
    assert geometry.signed_area(SQUARE[::-1]) == pytest.approx(-16)
    assert shapely.area(Polygon(L_SHAPE)) == pytest.approx(abs(geometry.signed_area(L_SHAPE)))
