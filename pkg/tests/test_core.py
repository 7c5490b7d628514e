import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entinav.core import (GP_BOUNDS, AgentKind, AgentState, CrowdState, Group, GroupParams, MotionParams,
                          WorldGeometry, integrate, integrate_crowd, neighbors)
from entinav.errors import BoundViolation, InputError, NotFoundError


def agent(i, x, y, **kw):
    return AgentState(i, AgentKind.PEDESTRIAN, (x, y), **kw)


def crowd_at(points):
    return CrowdState(tuple(agent(i, *p) for i, p in enumerate(points)))


# --- integrate

@pytest.mark.parametrize("pos,vel,dt,expected", [
    ((0, 0), (1, 0), 0.1, (0.1, 0.0)),
    ((4, -2), (0, 0), 0.37, (4.0, -2.0)),
    ((2, 3), (-1, 2), 0.5, (1.5, 4.0)),
])
def test_integrate_examples(pos, vel, dt, expected):
    a = agent(0, *pos, goal=(9, 9), preferred_velocity=(0.3, 0.4))
    b = integrate(a, vel, dt)
    assert b.position == pytest.approx(expected)
    assert b.current_velocity == tuple(map(float, vel))
    assert (b.id, b.kind, b.radius, b.goal, b.preferred_velocity) == (a.id, a.kind, a.radius, a.goal,
                                                                       a.preferred_velocity)


@pytest.mark.parametrize("vel,dt", [((math.nan, 0), 0.1), ((0, math.inf), 0.1), ((1, 0), 0.0), ((1, 0), -1)])
def test_integrate_rejects_bad_input(vel, dt):
    with pytest.raises(InputError):
        integrate(agent(0, 0, 0), vel, dt)


def test_integrate_crowd_keeps_ids_and_advances_time():
    c = crowd_at([(0, 0), (1, 1), (2, 2)])
    nxt = integrate_crowd(c, {0: (1, 0), 2: (0, -1)}, 0.1)
    assert nxt.ids == c.ids
    assert nxt.time == pytest.approx(0.1)
    assert nxt.get(0).position == pytest.approx((0.1, 0))
    assert nxt.get(1).position == (1, 1)
    assert nxt.get(2).position == pytest.approx((2, 1.9))


def test_integrate_crowd_rejects_nonfinite_velocity():
    with pytest.raises(InputError):
        integrate_crowd(crowd_at([(0, 0)]), {0: (math.nan, 0)}, 0.1)


# --- types

def test_agent_state_validation():
    with pytest.raises(InputError):
        agent(0, 0, 0, radius=0.0)
    with pytest.raises(InputError):
        agent(0, math.nan, 0)
    assert agent(0, 1, 2).goal == (1.0, 2.0)


def test_crowd_ids_unique():
    with pytest.raises(InputError):
        CrowdState((agent(1, 0, 0), agent(1, 1, 1)))
    with pytest.raises(NotFoundError):
        crowd_at([(0, 0)]).get(7)


def test_group_members_checked():
    c = crowd_at([(0, 0), (2, 0)])
    g = Group([0, 1])
    g.check_members(c)
    assert g.centroid(c) == pytest.approx((1, 0))
    with pytest.raises(NotFoundError):
        Group([0, 5]).check_members(c)
    with pytest.raises(InputError):
        Group([])


def test_group_params_defaults_and_corners():
    assert GroupParams().as_array() == pytest.approx([5, 0.7, 1.5, 0.5])
    assert GroupParams.minima().as_array() == pytest.approx([3, 0.3, 1.2, 0.1])
    assert GroupParams.maxima().as_array() == pytest.approx([10, 2.0, 2.2, 1.0])
    m = MotionParams()
    assert (m.max_neighbors, m.planning_horizon) == (10, 3.0)
    assert m.max_speed == pytest.approx(2.25)


@pytest.mark.parametrize("field,value", [("neighbor_dist", 2.9), ("radius", 2.01), ("pref_speed", 3.0),
                                         ("group_cohesion", 0.0)])
def test_group_params_bound_violation_names_field(field, value):
    with pytest.raises(BoundViolation) as exc:
        GroupParams(**{field: value})
    assert exc.value.field == field


def test_group_params_clamp_and_motion():
    gp = GroupParams.from_array([100, -1, 1.7, 0.5], clamp=True)
    assert gp.as_array() == pytest.approx([10, 0.3, 1.7, 0.5])
    m = gp.to_motion()
    assert (m.neighbor_dist, m.radius, m.pref_speed, m.group_cohesion) == (10, 0.3, 1.7, 0.5)
    assert m.max_neighbors == 10


def test_motion_params_validation():
    with pytest.raises(BoundViolation):
        MotionParams(max_neighbors=0)
    with pytest.raises(BoundViolation):
        MotionParams(group_cohesion=1.5)
    with pytest.raises(BoundViolation):
        MotionParams(planning_horizon=0)


def test_world_geometry():
    square = [(1, 1), (3, 1), (3, 3), (1, 3)]
    w = WorldGeometry((0, 0, 10, 10), [square])
    assert w.contains((0, 5)) and not w.contains((-0.1, 5))
    assert w.in_obstacle((2, 2)) and not w.in_obstacle((1, 2))
    assert w.clearance((5, 2)) == pytest.approx(2.0)
    assert w.clearance((2, 2)) == pytest.approx(-1.0)
    assert not w.is_free((3.2, 2), clearance=0.3)
    with pytest.raises(InputError):
        WorldGeometry((0, 0, 1, 1), [square])
    with pytest.raises(InputError):
        WorldGeometry((0, 0, 10, 10), [[(0, 0), (2, 2), (2, 0), (0, 2)]])
    with pytest.raises(InputError):
        WorldGeometry((1, 0, 0, 1))


# --- neighbors

def test_neighbors_lone_agent():
    assert neighbors(crowd_at([(0, 0)]), 0, 5.0, 10) == []


def test_neighbors_threshold():
    c = crowd_at([(0, 0), (2, 0), (0, 4)])
    assert neighbors(c, 0, 3.0, 10) == [1]


def test_neighbors_unknown_id():
    with pytest.raises(NotFoundError):
        neighbors(crowd_at([(0, 0)]), 3, 1.0, 1)


def brute_neighbors(points, ids, query, dist, k):
    q = points[ids.index(query)]
    cand = []
    for i, p in zip(ids, points):
        if i == query:
            continue
        d = math.dist(p, q)
        if d <= dist:
            cand.append((d, i))
    cand.sort()
    return [i for _, i in cand[:k]]


def test_neighbors_truncates_to_closest():
    rng = np.random.default_rng(4)
    pts = [(0.0, 0.0)] + [tuple(p) for p in rng.uniform(-2, 2, (12, 2))]
    c = crowd_at(pts)
    got = neighbors(c, 0, 10.0, 10)
    assert len(got) == 10
    assert got == brute_neighbors(pts, c.ids, 0, 10.0, 10)


def test_neighbors_ties_by_id():
    c = CrowdState((agent(5, 0, 0), agent(9, 1, 0), agent(2, -1, 0), agent(7, 0, 1)))
    assert neighbors(c, 5, 2.0, 2) == [2, 7]


coords = st.floats(-20, 20, allow_nan=False)


@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=25, unique=True),
       st.floats(0.1, 15), st.integers(1, 12), st.data())
def test_neighbors_match_brute_force(points, dist, k, data):
    c = crowd_at(points)
    q = data.draw(st.sampled_from(c.ids))
    assert neighbors(c, q, dist, k) == brute_neighbors(points, c.ids, q, dist, k)


@given(st.lists(st.tuples(coords, coords), min_size=2, max_size=20, unique=True), st.floats(0.1, 15))
def test_neighbors_symmetric_membership(points, dist):
    c = crowd_at(points)
    n = len(points)
    for i in c.ids:
        for j in neighbors(c, i, dist, n):
            assert i in neighbors(c, j, dist, n)


@given(st.sampled_from(list(GP_BOUNDS)), st.floats(-100, 100, allow_nan=False))
def test_group_params_accept_exactly_the_bounds(field, value):
    low, high, _ = GP_BOUNDS[field]
    if low <= value <= high:
        assert getattr(GroupParams(**{field: value}), field) == value
    else:
        with pytest.raises(BoundViolation):
            GroupParams(**{field: value})
