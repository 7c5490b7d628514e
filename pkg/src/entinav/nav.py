"""Robot navigation: grid roadmap, sampled generalized-velocity-obstacle control for
unicycle robots, and the socially-invisible and intervention team steps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from . import geometry
from .core import GP_FIELDS, AgentState, CrowdState, GroupParams, Group, WorldGeometry, AgentKind
from .edm import (EntitativityMapping, entitativity, invisibility, params_for_entitativity,
                  target_entitativity)
from .errors import InputError, PlanningError, WorldError
from .sim import Prediction, group_preferred_velocity

GOAL_TOLERANCE = 0.25
BLOCK_OFFSET = 0.5


# --------------------------------------------------------------------------- roadmap

@dataclass(frozen=True)
class Roadmap:
    nodes: np.ndarray
    edges: np.ndarray
    lengths: np.ndarray
    clearance: float = 0.0
    spacing: float = 0.5

    @cached_property
    def graph(self):
        n = len(self.nodes)
        if len(self.edges) == 0:
            return coo_matrix((n, n)).tocsr()
        i, j = self.edges[:, 0], self.edges[:, 1]
        return coo_matrix((np.r_[self.lengths, self.lengths], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()

    @cached_property
    def adjacency(self):
        adj = [[] for _ in range(len(self.nodes))]
        for (a, b), w in zip(self.edges, self.lengths):
            adj[a].append((int(b), float(w)))
            adj[b].append((int(a), float(w)))
        return [sorted(x) for x in adj]

    def components(self):
        return connected_components(self.graph, directed=False)

    def distances_to(self, node):
        return _dijkstra_cached(self, int(node))

    def nearest(self, point, world=None, clearance=0.0):
        """Nearest node whose straight connection to ``point`` is collision-free."""
        d = np.hypot(*(self.nodes - np.asarray(point, float)).T)
        for idx in np.lexsort((np.arange(len(d)), d)):
            if world is None or d[idx] == 0 or segment_clear(world, point, self.nodes[idx], clearance):
                return int(idx)
        raise PlanningError(f"no roadmap node visible from {tuple(point)}")


_DIJKSTRA_CACHE = {}


def _dijkstra_cached(roadmap, node):
    key = (id(roadmap), node)
    hit = _DIJKSTRA_CACHE.get(key)
    if hit is None or hit[0] is not roadmap:
        if len(_DIJKSTRA_CACHE) > 256:
            _DIJKSTRA_CACHE.clear()
        hit = (roadmap, dijkstra(roadmap.graph, directed=False, indices=node))
        _DIJKSTRA_CACHE[key] = hit
    return hit[1]


def segment_clear(world: WorldGeometry, a, b, clearance):
    for poly in world.obstacles:
        lo = poly.min(axis=0) - clearance
        hi = poly.max(axis=0) + clearance
        if (max(a[0], b[0]) < lo[0] or min(a[0], b[0]) > hi[0]
                or max(a[1], b[1]) < lo[1] or min(a[1], b[1]) > hi[1]):
            continue
        if geometry.segment_polygon_clearance(a, b, poly) < clearance:
            return False
    return True


def build_roadmap(world: WorldGeometry, clearance: float, spacing=0.5) -> Roadmap:
    """Uniform grid over the world bounds with 8-connected collision-free edges."""
    xmin, ymin, xmax, ymax = world.bounds
    xs = xmin + spacing * np.arange(int(math.floor((xmax - xmin) / spacing + 1e-9)) + 1)
    ys = ymin + spacing * np.arange(int(math.floor((ymax - ymin) / spacing + 1e-9)) + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    free = np.ones(len(grid), dtype=bool)
    for poly in world.obstacles:
        inside = geometry.points_in_polygon(grid, poly)
        near = geometry.boundary_distances(grid, poly) < clearance
        free &= ~(inside | near)
    if not free.any():
        raise WorldError("roadmap has no free nodes")
    index = -np.ones(len(grid), dtype=int)
    index[free] = np.arange(free.sum())
    nx, ny = len(xs), len(ys)
    edges = []
    for r in range(ny):
        for c in range(nx):
            a = r * nx + c
            if not free[a]:
                continue
            for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < ny and 0 <= cc < nx):
                    continue
                b = rr * nx + cc
                if free[b] and segment_clear(world, grid[a], grid[b], clearance):
                    edges.append((index[a], index[b]))
    nodes = grid[free]
    edges = np.array(edges, dtype=int).reshape(-1, 2)
    lengths = np.hypot(*(nodes[edges[:, 1]] - nodes[edges[:, 0]]).T) if len(edges) else np.zeros(0)
    return Roadmap(nodes, edges, lengths, clearance, spacing)


def next_waypoint(roadmap: Roadmap, start: int, goal: int):
    """Successor of ``start`` on a shortest path to ``goal``; ties go to the lower node index."""
    dist = roadmap.distances_to(goal)
    if not np.isfinite(dist[start]):
        raise PlanningError(f"goal node {goal} unreachable from node {start}")
    if start == goal:
        return goal
    best, best_cost = None, math.inf
    for n, w in roadmap.adjacency[start]:
        cost = w + dist[n]
        if cost < best_cost - 1e-9 or (abs(cost - best_cost) <= 1e-9 and n < best):
            best, best_cost = n, cost
    return best


def global_preferred_velocity(robot: AgentState, roadmap: Roadmap | None, goal, pref_speed: float,
                              world: WorldGeometry | None = None, tolerance=GOAL_TOLERANCE):
    """Velocity toward the next roadmap waypoint (or straight to the goal when visible)."""
    p = np.asarray(robot.position, float)
    g = np.asarray(goal, float)
    if np.hypot(*(g - p)) <= tolerance:
        return np.zeros(2)
    clearance = roadmap.clearance if roadmap is not None else robot.radius
    if roadmap is None or world is None or segment_clear(world, p, g, clearance):
        target = g
    else:
        s = roadmap.nearest(p, world, clearance)
        t = roadmap.nearest(g, world, clearance)
        at_node = np.hypot(*(roadmap.nodes[s] - p)) <= 1e-9
        if s == t:
            target = g if at_node else roadmap.nodes[s]
        else:
            nxt = next_waypoint(roadmap, s, t)
            if at_node or segment_clear(world, p, roadmap.nodes[nxt], clearance):
                target = roadmap.nodes[nxt]
            else:
                target = roadmap.nodes[s]
    d = target - p
    n = np.hypot(*d)
    if n <= 1e-12:
        return np.zeros(2)
    return pref_speed * d / n


# --------------------------------------------------------------------------- GVO

@dataclass(frozen=True)
class RobotDynamics:
    """Unicycle limits; a robot may stop, but never turns below ``v_min``."""

    v_max: float = 2.2
    v_min: float = 0.1
    omega_max: float = 1.5

    def __post_init__(self):
        if not (self.v_max >= self.v_min >= 0):
            raise InputError("need v_max >= v_min >= 0")
        if not self.omega_max > 0:
            raise InputError("omega_max must be positive")


@dataclass(frozen=True)
class GVOConfig:
    n_speeds: int = 11
    n_turns: int = 21
    margin: float = 0.1


class Control(NamedTuple):
    speed: float
    turn_rate: float
    velocity: tuple
    heading: float
    safe: bool
    clearance: float


def control_grid(dynamics: RobotDynamics, preferred_speed=None, speed_cap=None, config=GVOConfig()):
    """``(speeds, turns)`` for every sampled control; stop is last."""
    v_hi = dynamics.v_max if speed_cap is None else min(dynamics.v_max, speed_cap)
    v_lo = min(dynamics.v_min, v_hi)
    speeds = set(np.linspace(v_lo, v_hi, config.n_speeds).tolist())
    if preferred_speed is not None and preferred_speed > 0:
        speeds.add(float(np.clip(preferred_speed, max(v_lo, 1e-6), v_hi)))
    speeds = sorted(s for s in speeds if s > 0)
    turns = np.linspace(-dynamics.omega_max, dynamics.omega_max, config.n_turns)
    # zero turn first so exact ties favour driving straight, then alternate signs outward
    turns = sorted(turns, key=lambda w: (abs(w), -w))
    sp, tr = np.meshgrid(speeds, turns, indexing="ij")
    sp = np.r_[sp.ravel(), 0.0]
    tr = np.r_[tr.ravel(), 0.0]
    return sp, tr


def rollout(position, heading, speeds, turns, dt, steps):
    """Positions ``(C, steps, 2)`` and headings of unicycle rollouts holding each control."""
    k = np.arange(1, steps + 1)
    h = heading + np.outer(turns, k) * dt
    step = (speeds * dt)[:, None]
    xs = position[0] + np.cumsum(step * np.cos(h), axis=1)
    ys = position[1] + np.cumsum(step * np.sin(h), axis=1)
    return np.stack([xs, ys], axis=2), h


def _world_clearance(points, world: WorldGeometry):
    flat = points.reshape(-1, 2)
    xmin, ymin, xmax, ymax = world.bounds
    c = np.min(np.stack([flat[:, 0] - xmin, xmax - flat[:, 0], flat[:, 1] - ymin, ymax - flat[:, 1]]), axis=0)
    for poly in world.obstacles:
        d = geometry.boundary_distances(flat, poly)
        inside = geometry.points_in_polygon(flat, poly)
        c = np.minimum(c, np.where(inside, -d, d))
    return c.reshape(points.shape[:-1])


class MovingDisc(NamedTuple):
    positions: np.ndarray  # (steps, 2)
    radius: float


def gvo_select(robot: AgentState, dynamics: RobotDynamics, heading: float, preferred,
               prediction: Prediction | None, world: WorldGeometry, dt: float, *,
               horizon=3.0, speed_cap=None, personal_space=None, social_ids=None,
               pedestrian_radii=None, others=(), config=GVOConfig()) -> Control:
    """Pick the sampled control whose first-step velocity best matches ``preferred``.

    Each control is rolled out for ``horizon`` seconds against predicted
    pedestrian discs, ``others`` (other robots) and obstacles. Preference order:
    moving controls that also respect ``personal_space`` around ``social_ids``,
    then stopping, then controls that are merely collision-free; if none are,
    the least-penetrating control is returned with ``safe=False``.
    """
    steps = int(round(horizon / dt))
    pref = np.asarray(preferred, float)
    p0 = np.asarray(robot.position, float)
    speeds, turns = control_grid(dynamics, float(np.hypot(*pref)), speed_cap, config)
    pts, hs = rollout(p0, heading, speeds, turns, dt, steps)
    r = robot.radius + config.margin
    hard = _world_clearance(pts, world) - robot.radius
    hard = hard.min(axis=1)
    social = np.full(len(speeds), np.inf)
    if prediction is not None and prediction.positions:
        if prediction.steps < steps:
            raise InputError(f"prediction covers {prediction.steps} steps, planning needs {steps}")
        ids = sorted(prediction.positions)
        radii = pedestrian_radii or {}
        ped = np.stack([prediction.positions[i][:steps] for i in ids])  # (N, K, 2)
        prad = np.array([radii.get(i, 0.0) for i in ids])
        # the robot is within v_top * t of p0 at time t, so farther pedestrians never matter
        v_top = float(speeds.max())
        reach = v_top * dt * np.arange(1, steps + 1)
        slack = np.hypot(ped[..., 0] - p0[0], ped[..., 1] - p0[1]) - reach[None, :] - prad[:, None] - r
        limit = 0.0 if personal_space is None else max(0.0, personal_space - r)
        near = slack.min(axis=1) <= limit
        if near.any():
            ped, prad, ids = ped[near], prad[near], [i for i, m in zip(ids, near) if m]
            social_mask = None
            if personal_space is not None and social_ids is not None:
                social_mask = np.array([i in social_ids for i in ids])
                if not social_mask.any():
                    social_mask = None
            for k in range(steps):
                gap = cdist(pts[:, k, :], ped[:, k, :]) - prad[None, :]
                hard = np.minimum(hard, gap.min(axis=1) - r)
                if social_mask is not None:
                    social = np.minimum(social, gap[:, social_mask].min(axis=1) - personal_space)
    for other in others:
        op = np.asarray(other.positions)[:steps]
        gap = np.hypot(pts[..., 0] - op[None, :, 0], pts[..., 1] - op[None, :, 1]) - other.radius - r
        hard = np.minimum(hard, gap.min(axis=1))
    vel = np.stack([speeds * np.cos(hs[:, 0]), speeds * np.sin(hs[:, 0])], axis=1)
    cost = np.sum((vel - pref) ** 2, axis=1)
    stop = speeds == 0.0
    wants_motion = np.hypot(*pref) > 1e-9
    ok = hard >= 0.0
    tiers = [ok & (social >= 0.0) & (~stop if wants_motion else True),
             ok & (social >= 0.0) & stop,
             ok & ~stop,
             ok & stop]
    clearance = np.minimum(hard, social)
    for mask in tiers:
        if mask.any():
            idx = _argbest(cost, clearance, mask)
            return _control(idx, speeds, turns, vel, hs, True, hard)
    idx = _argbest(-hard, cost, np.ones_like(ok))
    return _control(idx, speeds, turns, vel, hs, False, hard)


def _argbest(primary, secondary, mask):
    cand = np.flatnonzero(mask)
    best = primary[cand].min()
    tied = cand[primary[cand] <= best + 1e-9]
    return int(tied[np.argmax(secondary[tied])])


def _control(idx, speeds, turns, vel, hs, safe, hard):
    return Control(float(speeds[idx]), float(turns[idx]), (float(vel[idx, 0]), float(vel[idx, 1])),
                   float(hs[idx, 0]), safe, float(hard[idx]))


# --------------------------------------------------------------------------- team steps

@dataclass
class NavState:
    """Mutable per-run robot bookkeeping: task goals, headings and the roadmap."""

    goals: dict
    headings: dict
    roadmap: Roadmap | None = None
    dynamics: RobotDynamics = field(default_factory=RobotDynamics)
    config: GVOConfig = field(default_factory=GVOConfig)
    dt: float = 0.1
    pedestrian_radii: dict = field(default_factory=dict)

    def apply(self, commands):
        for c in commands:
            self.headings[c.robot_id] = c.heading


@dataclass(frozen=True)
class InterventionCommand:
    robot_id: int
    goal: tuple
    velocity: tuple
    applied_params: GroupParams
    invisibility_used: float
    speed: float = 0.0
    turn_rate: float = 0.0
    heading: float = 0.0
    safe: bool = True


def _cohesive_preferred(robot, pref, centroid, params, n_robots):
    """Blend the goal velocity with attraction toward the robot centroid.

    Attraction only acts once a robot drifts beyond one personal-space
    diameter from the centroid, so fully cohesive groups still make progress.
    """
    speed = float(np.hypot(*pref))
    if speed <= 1e-12 or n_robots < 2:
        return pref
    d = float(np.hypot(*(np.asarray(centroid) - robot.position)))
    spread = 2.0 * params.radius
    weight = params.group_cohesion * min(1.0, max(0.0, d / spread - 1.0))
    probe = AgentState(robot.id, robot.kind, robot.position, goal=np.asarray(robot.position) + pref)
    return group_preferred_velocity(probe, centroid, weight, speed, arrival_tolerance=0.0)


def _drive(plan, crowd, world, prediction, nav: NavState, horizon):
    """GVO commands in robot-id order; later robots see earlier robots' chosen rollouts."""
    robots = {a.id: a for a in crowd.agents if a.id in plan}
    centroid = np.mean([a.position for a in robots.values()], axis=0)
    steps = int(round(horizon / nav.dt))
    committed = {}
    commands = []
    peds = [a for a in crowd.agents if a.kind is AgentKind.PEDESTRIAN]
    radii = dict(nav.pedestrian_radii)
    radii.update({a.id: a.radius for a in peds})
    for rid in sorted(plan):
        goal, params, s_used, blend = plan[rid]
        robot = robots[rid]
        pref = global_preferred_velocity(robot, nav.roadmap, goal, params.pref_speed, world)
        if blend:
            pref = _cohesive_preferred(robot, pref, centroid, params, len(robots))
        social = set(_social_neighbors(robot, peds, params))
        others = []
        for oid, other in robots.items():
            if oid == rid:
                continue
            if oid in committed:
                others.append(MovingDisc(committed[oid], other.radius))
            else:
                k = np.arange(1, steps + 1)[:, None] * nav.dt
                others.append(MovingDisc(np.asarray(other.position) + k * np.asarray(other.current_velocity),
                                         other.radius))
        control = gvo_select(robot, nav.dynamics, nav.headings.get(rid, 0.0), pref, prediction, world,
                             nav.dt, horizon=horizon, speed_cap=params.max_speed,
                             personal_space=params.radius, social_ids=social,
                             pedestrian_radii=radii, others=others, config=nav.config)
        pts, _ = rollout(np.asarray(robot.position, float), nav.headings.get(rid, 0.0),
                         np.array([control.speed]), np.array([control.turn_rate]), nav.dt, steps)
        committed[rid] = pts[0]
        commands.append(InterventionCommand(rid, tuple(map(float, goal)), control.velocity,
                                            _own_group_params(params),
                                            s_used, control.speed, control.turn_rate, control.heading,
                                            control.safe))
    return commands


def _social_neighbors(robot, peds, params):
    d = sorted((math.hypot(p.position[0] - robot.position[0], p.position[1] - robot.position[1]), p.id)
               for p in peds)
    return [i for dist, i in d if dist <= params.neighbor_dist][:params.max_neighbors]


def invisible_nav_step(robots: Group, crowd: CrowdState, world: WorldGeometry, mapping: EntitativityMapping,
                       s: float, prediction: Prediction | None, nav: NavState, goals=None):
    """Commands for the whole team at invisibility ``s``.

    The group parameters come from inverting the mapping at the target
    entitativity for ``s``; every robot steers toward its goal with the group's
    speed and cohesion, avoiding predicted pedestrians.
    """
    gp = params_for_entitativity(mapping, target_entitativity(mapping, s))
    params = robots.params.with_group(gp)
    goals = goals or nav.goals
    plan = {rid: (goals[rid], params, float(s), True) for rid in robots.member_ids}
    return _drive(plan, crowd, world, prediction, nav, params.planning_horizon)


def plain_nav_step(robots: Group, crowd, world, prediction, nav: NavState, mapping=None, goals=None):
    """Socially unaware GVO navigation at the group's own parameters (the comparison arm).

    The team still keeps formation, so with no pedestrians around it moves
    exactly like the invisible step at the same parameters.
    """
    params = robots.params
    gp = _own_group_params(params)
    s = invisibility(mapping, entitativity(mapping, gp)) if mapping is not None else float("nan")
    goals = goals or nav.goals
    plan = {rid: (goals[rid], params, s, True) for rid in robots.member_ids}
    return _drive(plan, crowd, world, prediction, nav, params.planning_horizon)


class ZoneEntry(NamedTuple):
    pedestrian_id: int
    time: float
    point: tuple
    approach: tuple
    zone: int


class InterventionResult(NamedTuple):
    commands: list
    uncovered: list
    entries: list
    invisibility_used: float


def predicted_entries(prediction: Prediction, zones, horizon, current=None):
    """First predicted zone entry per pedestrian within ``horizon`` seconds.

    Pedestrians already inside a zone (per ``current`` positions) are skipped.
    """
    polys = [geometry.as_polygon(z) for z in zones]
    entries = []
    steps = min(prediction.steps, int(round(horizon / prediction.dt)))
    for pid in sorted(prediction.positions):
        path = prediction.positions[pid]
        start = None if current is None else np.asarray(current[pid], float)
        if start is not None and any(geometry.point_in_polygon(start, poly) for poly in polys):
            continue
        found = None
        for k in range(steps):
            for zi, poly in enumerate(polys):
                if geometry.point_in_polygon(path[k], poly):
                    found = (k, zi)
                    break
            if found:
                break
        if not found:
            continue
        k, zi = found
        prev = path[k - 1] if k > 0 else (start if start is not None else path[k])
        cross = geometry.segment_crossing(prev, path[k], polys[zi])
        if cross is None:
            cross, _ = geometry.closest_boundary_point(path[k], polys[zi])
        d = path[k] - prev
        n = np.hypot(*d)
        approach = d / n if n > 1e-12 else np.zeros(2)
        entries.append(ZoneEntry(pid, (k + 1) * prediction.dt, tuple(map(float, cross)),
                                 tuple(map(float, approach)), zi))
    return entries


def blocking_point(entry: ZoneEntry, zone, robot_radius, offset=BLOCK_OFFSET):
    """Zone-boundary point nearest the entry, pushed back along the approach direction."""
    poly = geometry.as_polygon(zone)
    b, _ = geometry.closest_boundary_point(entry.point, poly)
    return b - np.asarray(entry.approach) * (robot_radius + offset)


def assign_robots(entries, robots, zones, merge_radius=1.0):
    """Greedy nearest-robot assignment; returns ``({robot_id: (goal, entry)}, uncovered)``."""
    targets = []
    for e in sorted(entries, key=lambda e: (e.time, e.pedestrian_id)):
        robot_r = max(r.radius for r in robots)
        g = blocking_point(e, zones[e.zone], robot_r)
        if any(np.hypot(*(g - t[0])) < merge_radius for t in targets):
            continue
        targets.append((g, e))
    pairs = sorted((float(np.hypot(*(g - np.asarray(r.position)))), r.id, ti)
                   for ti, (g, e) in enumerate(targets) for r in robots)
    used_r, used_t, assigned = set(), set(), {}
    for _, rid, ti in pairs:
        if rid in used_r or ti in used_t:
            continue
        used_r.add(rid)
        used_t.add(ti)
        assigned[rid] = targets[ti]
    uncovered = [targets[ti][1] for ti in range(len(targets)) if ti not in used_t]
    return assigned, uncovered


def intervention_step(robots: Group, crowd: CrowdState, world: WorldGeometry, mapping: EntitativityMapping,
                      zones, s_min: float, prediction: Prediction, horizon: float, nav: NavState,
                      planning_prediction: Prediction | None = None) -> InterventionResult:
    """Send robots to block predicted zone entries while keeping invisibility >= ``s_min``.

    ``prediction`` is the pedestrians' course as if the robots were absent and
    drives threat detection; ``planning_prediction`` (defaults to it) is what
    the local planner avoids.
    """
    if not 0.0 <= s_min <= 1.0:
        raise InputError(f"s_min must lie in [0, 1], got {s_min}")
    if not zones:
        raise InputError("intervention needs at least one restricted zone")
    if planning_prediction is None:
        planning_prediction = prediction
    current = {a.id: a.position for a in crowd.agents}
    entries = predicted_entries(prediction, zones, horizon, current)
    if not entries:
        return InterventionResult(invisible_nav_step(robots, crowd, world, mapping, 1.0, planning_prediction, nav),
                                  [], [], 1.0)
    urgency = max(min(1.0, max(0.0, 1.0 - e.time / horizon)) for e in entries)
    s_used = max(s_min, 1.0 - urgency)
    gp = params_for_entitativity(mapping, target_entitativity(mapping, s_used))
    params = robots.params.with_group(gp)
    quiet = robots.params.with_group(params_for_entitativity(mapping, target_entitativity(mapping, 1.0)))
    members = [crowd.get(r) for r in robots.member_ids]
    assigned, uncovered = assign_robots(entries, members, zones)
    plan = {}
    for rid in robots.member_ids:
        if rid in assigned:
            plan[rid] = (assigned[rid][0], params, s_used, False)
        else:
            plan[rid] = (nav.goals[rid], quiet, 1.0, True)
    commands = _drive(plan, crowd, world, planning_prediction, nav, params.planning_horizon)
    return InterventionResult(commands, uncovered, entries, s_used)


def _own_group_params(params):
    return GroupParams.from_array([getattr(params, f) for f in GP_FIELDS], clamp=True)
