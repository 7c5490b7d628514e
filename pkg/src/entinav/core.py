"""Agent, crowd and world types plus the two primitives every other module leans on:
explicit Euler integration and the ranked neighbour query."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import geometry
from .errors import BoundViolation, InputError, NotFoundError

# name -> (min, max, default); order is the column order of the entitativity matrix
GP_BOUNDS = {
    "neighbor_dist": (3.0, 10.0, 5.0),
    "radius": (0.3, 2.0, 0.7),
    "pref_speed": (1.2, 2.2, 1.5),
    "group_cohesion": (0.1, 1.0, 0.5),
}
GP_FIELDS = tuple(GP_BOUNDS)

DEFAULT_MAX_NEIGHBORS = 10
DEFAULT_PLANNING_HORIZON = 3.0
DEFAULT_DT = 0.1
SPEED_CAP_FACTOR = 1.5


class AgentKind(str, Enum):
    PEDESTRIAN = "pedestrian"
    ROBOT = "robot"


def _vec(value, name):
    v = tuple(float(c) for c in value)
    if len(v) != 2:
        raise InputError(f"{name} must have 2 components, got {len(v)}")
    if not all(math.isfinite(c) for c in v):
        raise InputError(f"{name} must be finite, got {v}")
    return v


@dataclass(frozen=True)
class AgentState:
    """Position, current velocity and preferred velocity of one agent.

    ``goal`` defaults to the starting position (an agent with nowhere to go).
    """

    id: int
    kind: AgentKind
    position: tuple
    current_velocity: tuple = (0.0, 0.0)
    preferred_velocity: tuple = (0.0, 0.0)
    radius: float = GP_BOUNDS["radius"][2]
    goal: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AgentKind(self.kind))
        object.__setattr__(self, "position", _vec(self.position, "position"))
        object.__setattr__(self, "current_velocity", _vec(self.current_velocity, "current_velocity"))
        object.__setattr__(self, "preferred_velocity", _vec(self.preferred_velocity, "preferred_velocity"))
        goal = self.position if self.goal is None else self.goal
        object.__setattr__(self, "goal", _vec(goal, "goal"))
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise InputError(f"radius must be positive, got {self.radius}")

    @property
    def speed(self):
        return math.hypot(*self.current_velocity)


@dataclass(frozen=True)
class MotionParams:
    """Per-agent motion-model parameters (six of them)."""

    neighbor_dist: float = GP_BOUNDS["neighbor_dist"][2]
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS
    planning_horizon: float = DEFAULT_PLANNING_HORIZON
    radius: float = GP_BOUNDS["radius"][2]
    pref_speed: float = GP_BOUNDS["pref_speed"][2]
    group_cohesion: float = GP_BOUNDS["group_cohesion"][2]

    def __post_init__(self):
        for name in ("neighbor_dist", "planning_horizon", "radius", "pref_speed"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise BoundViolation(name, value, 0, math.inf)
        if int(self.max_neighbors) != self.max_neighbors or self.max_neighbors < 1:
            raise BoundViolation("max_neighbors", self.max_neighbors, 1, math.inf)
        if not 0.0 <= self.group_cohesion <= 1.0:
            raise BoundViolation("group_cohesion", self.group_cohesion, 0.0, 1.0)

    @property
    def max_speed(self):
        return SPEED_CAP_FACTOR * self.pref_speed

    def with_group(self, gp: GroupParams) -> MotionParams:
        """Copy with the four group-analysed fields taken from ``gp``."""
        return replace(self, **gp.as_dict())


@dataclass(frozen=True)
class GroupParams:
    """The four analysed group parameters, each checked against its inclusive bounds."""

    neighbor_dist: float = GP_BOUNDS["neighbor_dist"][2]
    radius: float = GP_BOUNDS["radius"][2]
    pref_speed: float = GP_BOUNDS["pref_speed"][2]
    group_cohesion: float = GP_BOUNDS["group_cohesion"][2]

    def __post_init__(self):
        for name, (low, high, _) in GP_BOUNDS.items():
            value = float(getattr(self, name))
            if not (math.isfinite(value) and low <= value <= high):
                raise BoundViolation(name, value, low, high)
            object.__setattr__(self, name, value)

    @classmethod
    def defaults(cls):
        return cls()

    @classmethod
    def minima(cls):
        return cls(*(b[0] for b in GP_BOUNDS.values()))

    @classmethod
    def maxima(cls):
        return cls(*(b[1] for b in GP_BOUNDS.values()))

    @classmethod
    def from_array(cls, values, clamp=False):
        values = [float(v) for v in values]
        if clamp:
            values = [min(max(v, lo), hi) for v, (lo, hi, _) in zip(values, GP_BOUNDS.values())]
        return cls(*values)

    def as_array(self):
        return np.array([getattr(self, f) for f in GP_FIELDS])

    def as_dict(self):
        return {f: getattr(self, f) for f in GP_FIELDS}

    def to_motion(self, base: MotionParams | None = None) -> MotionParams:
        return (base or MotionParams()).with_group(self)


@dataclass(frozen=True)
class CrowdState:
    agents: tuple
    time: float = 0.0

    def __post_init__(self):
        agents = tuple(self.agents)
        ids = [a.id for a in agents]
        if len(set(ids)) != len(ids):
            raise InputError(f"agent ids must be unique, got {ids}")
        object.__setattr__(self, "agents", agents)

    def get(self, agent_id) -> AgentState:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise NotFoundError(f"no agent with id {agent_id}")

    @property
    def ids(self):
        return [a.id for a in self.agents]

    def of_kind(self, kind):
        kind = AgentKind(kind)
        return [a for a in self.agents if a.kind is kind]

    def positions(self):
        return np.array([a.position for a in self.agents], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class Group:
    member_ids: tuple
    params: MotionParams = field(default_factory=MotionParams)

    def __post_init__(self):
        object.__setattr__(self, "member_ids", tuple(self.member_ids))
        if not self.member_ids:
            raise InputError("a group needs at least one member")

    def check_members(self, crowd: CrowdState):
        known = set(crowd.ids)
        missing = [m for m in self.member_ids if m not in known]
        if missing:
            raise NotFoundError(f"group members not in crowd: {missing}")

    def centroid(self, crowd: CrowdState):
        return np.mean([crowd.get(m).position for m in self.member_ids], axis=0)


@dataclass(frozen=True)
class WorldGeometry:
    """Axis-aligned bounds ``(xmin, ymin, xmax, ymax)`` and simple polygon obstacles."""

    bounds: tuple = (-50.0, -50.0, 50.0, 50.0)
    obstacles: tuple = ()

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        if len(b) != 4 or not all(math.isfinite(v) for v in b) or b[0] >= b[2] or b[1] >= b[3]:
            raise InputError(f"bounds must be (xmin, ymin, xmax, ymax) with xmin<xmax, ymin<ymax; got {b}")
        object.__setattr__(self, "bounds", b)
        polys = []
        for i, obs in enumerate(self.obstacles):
            poly = geometry.as_polygon(obs)
            if not geometry.is_simple(poly):
                raise InputError(f"obstacle {i} is not a simple polygon")
            if (poly[:, 0].min() < b[0] or poly[:, 0].max() > b[2]
                    or poly[:, 1].min() < b[1] or poly[:, 1].max() > b[3]):
                raise InputError(f"obstacle {i} extends outside the world bounds")
            poly.setflags(write=False)
            polys.append(poly)
        object.__setattr__(self, "obstacles", tuple(polys))

    def contains(self, point):
        x, y = point
        return self.bounds[0] <= x <= self.bounds[2] and self.bounds[1] <= y <= self.bounds[3]

    def in_obstacle(self, point):
        return any(geometry.point_in_polygon(point, poly) for poly in self.obstacles)

    def clearance(self, point):
        """Distance to the nearest obstacle or bound wall (negative if inside an obstacle)."""
        x, y = point
        xmin, ymin, xmax, ymax = self.bounds
        c = min(x - xmin, xmax - x, y - ymin, ymax - y)
        for poly in self.obstacles:
            c = min(c, geometry.polygon_clearance(point, poly))
        return c

    def is_free(self, point, clearance=0.0):
        return self.contains(point) and self.clearance(point) >= clearance


def integrate(state: AgentState, new_velocity, dt: float) -> AgentState:
    """Explicit Euler step: move by ``new_velocity * dt`` and adopt it as current velocity."""
    v = _vec(new_velocity, "new_velocity")
    if not (math.isfinite(dt) and dt > 0):
        raise InputError(f"dt must be positive and finite, got {dt}")
    x, y = state.position
    return replace(state, position=(x + v[0] * dt, y + v[1] * dt), current_velocity=v)


def evolve(state: AgentState, **changes) -> AgentState:
    """``replace`` without re-validation, for hot loops whose inputs are already checked."""
    new = object.__new__(AgentState)
    new.__dict__.update(state.__dict__)
    new.__dict__.update(changes)
    return new


def integrate_crowd(crowd: CrowdState, velocities: dict, dt: float, preferred: dict | None = None) -> CrowdState:
    if not (math.isfinite(dt) and dt > 0):
        raise InputError(f"dt must be positive and finite, got {dt}")
    agents = []
    for a in crowd.agents:
        v = _vec(velocities.get(a.id, a.current_velocity), f"velocity of agent {a.id}")
        x, y = a.position
        changes = {"position": (x + v[0] * dt, y + v[1] * dt), "current_velocity": v}
        if preferred is not None and a.id in preferred:
            changes["preferred_velocity"] = _vec(preferred[a.id], "preferred_velocity")
        agents.append(evolve(a, **changes))
    return CrowdState(tuple(agents), crowd.time + dt)


def rank_neighbors(ids, positions, index, neighbor_dist, max_neighbors):
    """Indices of agents within ``neighbor_dist`` of ``positions[index]``, nearest first.

    Ties in distance go to the lower id. Works on raw arrays so the simulator
    can call it without building AgentState objects.
    """
    d = np.hypot(*(positions - positions[index]).T)
    cand = np.flatnonzero(d <= neighbor_dist)
    cand = cand[cand != index]
    if len(cand) == 0:
        return cand
    order = np.lexsort((np.asarray(ids)[cand], d[cand]))
    return cand[order][:max_neighbors]


def neighbors(crowd: CrowdState, agent_id, neighbor_dist: float, max_neighbors: int):
    """Ids of agents within ``neighbor_dist`` (centre distance), nearest first, at most ``max_neighbors``."""
    ids = crowd.ids
    try:
        index = ids.index(agent_id)
    except ValueError:
        raise NotFoundError(f"no agent with id {agent_id}") from None
    picked = rank_neighbors(ids, crowd.positions(), index, neighbor_dist, max_neighbors)
    return [ids[i] for i in picked]
