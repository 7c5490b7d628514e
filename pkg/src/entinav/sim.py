"""Deterministic crowd simulation, motion-parameter fitting and path prediction.

Pedestrian avoidance uses reciprocal velocity obstacles in their half-plane form:
each neighbour contributes one linear constraint on the new velocity, the agent
takes half of the avoidance effort against other pedestrians and all of it
against externally driven robots, and a small 2-D linear program picks the
velocity nearest the preferred one inside the speed disc. When the constraints
are jointly infeasible the program falls back to the velocity of least
penetration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from . import geometry
from .core import (DEFAULT_DT, GP_BOUNDS, GP_FIELDS, AgentKind, AgentState, CrowdState,
                   MotionParams, WorldGeometry, evolve, integrate_crowd)
from .edm import NORMALIZATION_OFFSET, NORMALIZATION_SCALE
from .errors import InputError, InsufficientDataError, ParseError, ValidationError

EPS = 1e-9
OBSTACLE_HORIZON = 1.0
ARRIVAL_TOLERANCE = 0.05
FIT_WINDOW = 20
FIT_LAMBDA = 0.1
FIT_SWEEPS = 3
DEFAULT_REACTION_GAIN = 3.0
# clockwise tilt of a contested preferred velocity: keep to the right, which breaks symmetric jams
PASSING_BIAS = math.radians(5.0)

# --------------------------------------------------------------------------- LP solver
# Lines are (px, py, dx, dy); the permitted side is to the left of (dx, dy).


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


def _lp1(lines, no, radius, ox, oy, dir_opt):
    px, py, dx, dy = lines[no]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left = -dot - sq
    t_right = -dot + sq
    for i in range(no):
        qx, qy, ex, ey = lines[i]
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= EPS:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if dir_opt:
        t = t_right if ox * dx + oy * dy > 0.0 else t_left
    else:
        t = dx * (ox - px) + dy * (oy - py)
        t = min(max(t, t_left), t_right)
    return px + t * dx, py + t * dy


def _lp2(lines, radius, ox, oy, dir_opt):
    """Returns (index of first failing line or len(lines), result)."""
    if dir_opt:
        rx, ry = ox * radius, oy * radius
    else:
        n2 = ox * ox + oy * oy
        if n2 > radius * radius:
            n = math.sqrt(n2)
            rx, ry = ox / n * radius, oy / n * radius
        else:
            rx, ry = ox, oy
    for i, (px, py, dx, dy) in enumerate(lines):
        if _det(dx, dy, px - rx, py - ry) > 0.0:
            res = _lp1(lines, i, radius, ox, oy, dir_opt)
            if res is None:
                return i, (rx, ry)
            rx, ry = res
    return len(lines), (rx, ry)


def _lp3(lines, n_hard, begin, radius, result):
    rx, ry = result
    distance = 0.0
    for i in range(begin, len(lines)):
        px, py, dx, dy = lines[i]
        if _det(dx, dy, px - rx, py - ry) > distance:
            proj = list(lines[:n_hard])
            for j in range(n_hard, i):
                qx, qy, ex, ey = lines[j]
                determinant = _det(dx, dy, ex, ey)
                if abs(determinant) <= EPS:
                    if dx * ex + dy * ey > 0.0:
                        continue
                    lpx, lpy = 0.5 * (px + qx), 0.5 * (py + qy)
                else:
                    s = _det(ex, ey, px - qx, py - qy) / determinant
                    lpx, lpy = px + s * dx, py + s * dy
                ux, uy = ex - dx, ey - dy
                n = math.hypot(ux, uy)
                proj.append((lpx, lpy, ux / n, uy / n))
            fail, res = _lp2(proj, radius, -dy, dx, True)
            if fail >= len(proj):
                rx, ry = res
            distance = _det(dx, dy, px - rx, py - ry)
    return rx, ry


def solve_velocity(lines, n_hard, pref, max_speed):
    """Velocity closest to ``pref`` within ``max_speed`` satisfying all lines.

    The first ``n_hard`` lines are kept when infeasible; the rest are relaxed
    uniformly (least penetration). Returns ``(velocity, feasible)``.
    """
    fail, res = _lp2(lines, max_speed, pref[0], pref[1], False)
    if fail < len(lines):
        return _lp3(lines, n_hard, fail, max_speed, res), False
    return res, True


def solve_tiered(walls, contact, soft, pref, max_speed):
    """Solve with three priorities: walls, one-step contact lines, then horizon lines.

    Horizon lines are relaxed first; if walls and contact lines alone are
    infeasible, contact lines are relaxed uniformly and horizon lines dropped.
    """
    hard = walls + contact
    lines = hard + soft
    fail, res = _lp2(lines, max_speed, pref[0], pref[1], False)
    if fail >= len(lines):
        return res, True
    if fail >= len(hard):
        return _lp3(lines, len(hard), fail, max_speed, res), False
    fail, res = _lp2(hard, max_speed, pref[0], pref[1], False)
    if fail >= len(hard):
        return _lp3(lines, len(hard), len(hard), max_speed, res), False
    return _lp3(hard, len(walls), fail, max_speed, res), False


# --------------------------------------------------------------------------- constraints

def _agent_line(px, py, vx, vy, r, opx, opy, ovx, ovy, orad, tau, dt, share):
    rpx, rpy = opx - px, opy - py
    rvx, rvy = vx - ovx, vy - ovy
    dist_sq = rpx * rpx + rpy * rpy
    comb = r + orad
    comb_sq = comb * comb
    if dist_sq > comb_sq:
        inv_tau = 1.0 / tau
        wx, wy = rvx - inv_tau * rpx, rvy - inv_tau * rpy
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * rpx + wy * rpy
        if dot1 < 0.0 and dot1 * dot1 > comb_sq * w_len_sq:
            w_len = math.sqrt(w_len_sq)
            ux_, uy_ = wx / w_len, wy / w_len
            dx, dy = uy_, -ux_
            k = comb * inv_tau - w_len
            ux, uy = k * ux_, k * uy_
        else:
            leg = math.sqrt(dist_sq - comb_sq)
            if _det(rpx, rpy, wx, wy) > 0.0:
                dx = (rpx * leg - rpy * comb) / dist_sq
                dy = (rpx * comb + rpy * leg) / dist_sq
            else:
                dx = -(rpx * leg + rpy * comb) / dist_sq
                dy = -(-rpx * comb + rpy * leg) / dist_sq
            dot2 = rvx * dx + rvy * dy
            ux, uy = dot2 * dx - rvx, dot2 * dy - rvy
    else:
        inv_dt = 1.0 / dt
        wx, wy = rvx - inv_dt * rpx, rvy - inv_dt * rpy
        w_len = math.hypot(wx, wy)
        if w_len == 0.0:
            wx, wy, w_len = -rpx, -rpy, max(math.hypot(rpx, rpy), EPS)
            if w_len == EPS:
                wx, wy, w_len = 1.0, 0.0, 1.0
        ux_, uy_ = wx / w_len, wy / w_len
        dx, dy = uy_, -ux_
        k = comb * inv_dt - w_len
        ux, uy = k * ux_, k * uy_
    return vx + share * ux, vy + share * uy, dx, dy


def _wall_line(nx, ny, gap, tau):
    """Half-plane ``v . n >= -gap / tau`` with ``n`` pointing away from the wall."""
    off = -gap / tau
    return nx * off, ny * off, ny, -nx


def obstacle_lines(px, py, radius, max_speed, world: WorldGeometry, tau=OBSTACLE_HORIZON):
    reach = tau * max_speed + radius
    lines = []
    xmin, ymin, xmax, ymax = world.bounds
    for gap, nx, ny in ((px - xmin, 1.0, 0.0), (xmax - px, -1.0, 0.0),
                        (py - ymin, 0.0, 1.0), (ymax - py, 0.0, -1.0)):
        if gap < reach:
            lines.append(_wall_line(nx, ny, max(gap - radius, 0.0), tau))
    p = np.array((px, py))
    for poly in world.obstacles:
        n = len(poly)
        for k in range(n):
            q = geometry.closest_point_on_segment(p, poly[k], poly[(k + 1) % n])
            ddx, ddy = px - q[0], py - q[1]
            d = math.hypot(ddx, ddy)
            if d >= reach or d <= EPS:
                continue
            lines.append(_wall_line(ddx / d, ddy / d, max(d - radius, 0.0), tau))
    return lines


# --------------------------------------------------------------------------- preferred velocity

def _unit(x, y):
    n = math.hypot(x, y)
    if n <= EPS:
        return 0.0, 0.0
    return x / n, y / n


def group_preferred_velocity(agent: AgentState, group_centroid, cohesion: float, pref_speed: float,
                             arrival_tolerance=ARRIVAL_TOLERANCE):
    """Blend of goal direction and centroid direction, scaled to ``pref_speed``.

    An agent within ``arrival_tolerance`` of its goal has arrived and gets a zero vector.
    """
    if not 0.0 <= cohesion <= 1.0:
        raise InputError(f"cohesion must lie in [0, 1], got {cohesion}")
    if not pref_speed > 0:
        raise InputError(f"pref_speed must be positive, got {pref_speed}")
    px, py = agent.position
    gx, gy = _unit(agent.goal[0] - px, agent.goal[1] - py)
    if math.hypot(agent.goal[0] - px, agent.goal[1] - py) <= arrival_tolerance:
        return np.zeros(2)
    cx, cy = _unit(group_centroid[0] - px, group_centroid[1] - py)
    bx = (1.0 - cohesion) * gx + cohesion * cx
    by = (1.0 - cohesion) * gy + cohesion * cy
    if (cx == 0.0 and cy == 0.0) or math.hypot(bx, by) <= EPS:
        bx, by = gx, gy
    ux, uy = _unit(bx, by)
    return np.array((pref_speed * ux, pref_speed * uy))


class ReactionDisc(NamedTuple):
    """A robot group as pedestrians perceive it: a moving disc they steer around."""

    center: tuple
    radius: float
    velocity: tuple


def reaction_disc(robots, invisibility: float, gain=DEFAULT_REACTION_GAIN):
    """Disc at the robot centroid; radius grows from 1x (s=1) to ``gain``x (s=0) the bounding radius."""
    if not robots:
        return None
    pos = np.array([r.position for r in robots])
    c = pos.mean(axis=0)
    bounding = max(float(np.hypot(*(p - c))) + r.radius for p, r in zip(pos, robots))
    scale = 1.0 + (gain - 1.0) * (1.0 - invisibility)
    vel = np.mean([r.current_velocity for r in robots], axis=0)
    return ReactionDisc((float(c[0]), float(c[1])), bounding * scale, (float(vel[0]), float(vel[1])))


def _detour(px, py, r, pref, disc: ReactionDisc):
    """Keep ``pref`` from leading into ``disc``.

    Outside the disc a heading that would cross it is rotated onto the nearer
    tangent; inside, the inward radial component is removed.
    """
    cx, cy = disc.center
    R = disc.radius + r
    ddx, ddy = cx - px, cy - py
    d = math.hypot(ddx, ddy)
    speed = math.hypot(pref[0], pref[1])
    if speed <= EPS or d <= EPS:
        return pref
    ux, uy = pref[0] / speed, pref[1] / speed
    along = (ux * ddx + uy * ddy) / d
    if along <= 0.0:
        return pref
    if d <= R:
        tx, ty = ux - along * ddx / d, uy - along * ddy / d
        n = math.hypot(tx, ty)
        if n <= EPS:
            tx, ty, n = -ddy, ddx, d
        return np.array((speed * tx / n, speed * ty / n))
    miss = abs(_det(ux, uy, ddx, ddy))
    if miss >= R:
        return pref
    half = math.asin(min(1.0, R / d))
    base = math.atan2(ddy, ddx)
    side = 1.0 if _det(ddx, ddy, ux, uy) >= 0.0 else -1.0
    ang = base + side * half
    return np.array((speed * math.cos(ang), speed * math.sin(ang)))


# --------------------------------------------------------------------------- stepping

class StepResult(NamedTuple):
    velocities: dict
    infeasible: tuple


def agent_lines(p, v, r, op, ov, orad, tau, dt, share):
    """Vectorised :func:`_agent_line` over ``m`` pairs; returns an ``(m, 4)`` array of lines."""
    rp = op - p
    rv = v - ov
    dist_sq = np.einsum("ij,ij->i", rp, rp)
    comb = r + orad
    comb_sq = comb * comb
    out = np.empty((len(p), 4))
    apart = dist_sq > comb_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        # separated: truncated cone, either the cutoff circle or a leg
        w = rv - rp / tau[:, None]
        w_len_sq = np.einsum("ij,ij->i", w, w)
        dot1 = np.einsum("ij,ij->i", w, rp)
        circle = apart & (dot1 < 0.0) & (dot1 * dot1 > comb_sq * w_len_sq)
        w_len = np.sqrt(w_len_sq)
        wu = w / w_len[:, None]
        k = comb / tau - w_len
        u_circle = wu * k[:, None]
        d_circle = np.stack((wu[:, 1], -wu[:, 0]), axis=1)
        leg = np.sqrt(np.maximum(dist_sq - comb_sq, 0.0))
        left = (rp[:, 0] * w[:, 1] - rp[:, 1] * w[:, 0]) > 0.0
        dl = np.stack((rp[:, 0] * leg - rp[:, 1] * comb, rp[:, 0] * comb + rp[:, 1] * leg), axis=1)
        dr = -np.stack((rp[:, 0] * leg + rp[:, 1] * comb, -rp[:, 0] * comb + rp[:, 1] * leg), axis=1)
        d_leg = np.where(left[:, None], dl, dr) / dist_sq[:, None]
        dot2 = np.einsum("ij,ij->i", rv, d_leg)
        u_leg = dot2[:, None] * d_leg - rv
        # overlapping: push apart within one step
        wc = rv - rp / dt
        wc_len = np.hypot(wc[:, 0], wc[:, 1])
        still = wc_len == 0.0
        if still.any():
            rp_len = np.maximum(np.hypot(rp[:, 0], rp[:, 1]), EPS)
            fallback = np.where((rp_len == EPS)[:, None], np.array([[1.0, 0.0]]), -rp)
            wc = np.where(still[:, None], fallback, wc)
            wc_len = np.where(still, np.where(rp_len == EPS, 1.0, rp_len), wc_len)
        wcu = wc / wc_len[:, None]
        u_touch = wcu * (comb / dt - wc_len)[:, None]
        d_touch = np.stack((wcu[:, 1], -wcu[:, 0]), axis=1)
    u = np.where(apart[:, None], np.where(circle[:, None], u_circle, u_leg), u_touch)
    d = np.where(apart[:, None], np.where(circle[:, None], d_circle, d_leg), d_touch)
    out[:, :2] = v + share[:, None] * u
    out[:, 2:] = d
    return out


def rvo_step(crowd: CrowdState, params: dict, world: WorldGeometry, dt: float,
             active=None) -> StepResult:
    """New velocities for every agent in ``active`` (default: all with parameters).

    All velocities come from the same snapshot. Agents outside ``active`` are
    moving obstacles; pedestrians take full responsibility for robots and half
    for everyone else.
    """
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    agents = crowd.agents
    if active is None:
        active = [a.id for a in agents if a.id in params]
    active = set(active)
    missing = [i for i in active if i not in params]
    if missing:
        raise InputError(f"no motion parameters for agents {sorted(missing)}")
    rows = [i for i, a in enumerate(agents) if a.id in active]
    if not rows:
        return StepResult({}, ())
    ids = np.array([a.id for a in agents])
    pos = np.array([a.position for a in agents], dtype=float).reshape(-1, 2)
    vel = np.array([a.current_velocity for a in agents], dtype=float).reshape(-1, 2)
    rad = np.array([a.radius for a in agents], dtype=float)
    robot = np.array([a.kind is AgentKind.ROBOT for a in agents])
    plist = [params[agents[i].id] for i in rows]
    reach = np.array([p.neighbor_dist for p in plist])
    rows = np.array(rows)

    dist = np.hypot(*(pos[rows, None, :] - pos[None, :, :]).transpose(2, 0, 1))
    dist[np.arange(len(rows)), rows] = np.inf
    dist[dist > reach[:, None]] = np.inf
    order = np.lexsort((np.broadcast_to(ids, dist.shape), dist), axis=1)
    owner, other = [], []
    spans = []
    for k, p in enumerate(plist):
        nb = order[k, :p.max_neighbors]
        nb = nb[np.isfinite(dist[k, nb])]
        spans.append((len(owner), len(owner) + len(nb)))
        owner.extend([rows[k]] * len(nb))
        other.extend(nb.tolist())
    owner = np.array(owner, dtype=int)
    other = np.array(other, dtype=int)
    if len(owner):
        share = np.where(~robot[owner] & robot[other], 1.0, 0.5)
        taus = np.array([plist[k].planning_horizon for k, (lo, hi) in enumerate(spans) for _ in range(hi - lo)])
        args = (pos[owner], vel[owner], rad[owner], pos[other], vel[other], rad[other])
        soft_all = agent_lines(*args, taus, dt, share).tolist()
        contact_all = agent_lines(*args, np.full(len(owner), dt), dt, share).tolist()
    velocities = {}
    infeasible = []
    for k, i in enumerate(rows):
        a = agents[i]
        p = plist[k]
        lo, hi = spans[k]
        walls = obstacle_lines(a.position[0], a.position[1], a.radius, p.max_speed, world)
        soft = [tuple(x) for x in soft_all[lo:hi]] if hi > lo else []
        contact = [tuple(x) for x in contact_all[lo:hi]] if hi > lo else []
        pref = a.preferred_velocity
        if any(_det(dx, dy, px - pref[0], py - pref[1]) > 0.0 for px, py, dx, dy in soft):
            c, s = math.cos(PASSING_BIAS), math.sin(PASSING_BIAS)
            pref = (c * pref[0] + s * pref[1], -s * pref[0] + c * pref[1])
        v, ok = solve_tiered(walls, contact, soft, pref, p.max_speed)
        if not ok:
            infeasible.append(a.id)
        speed = math.hypot(v[0], v[1])
        if speed > p.max_speed:
            v = (v[0] * p.max_speed / speed, v[1] * p.max_speed / speed)
        velocities[a.id] = (float(v[0]), float(v[1]))
    return StepResult(velocities, tuple(sorted(infeasible)))


def preferred_velocities(crowd: CrowdState, params: dict, dt: float, groups=(), active=None, discs=()):
    """Preferred velocity for each active agent: goal/centroid blend, disc detour, no overshoot."""
    member_of = {}
    for g in groups:
        for m in g:
            member_of[m] = g
    centroids = {}
    out = {}
    for a in crowd.agents:
        if a.id not in params or (active is not None and a.id not in active):
            continue
        p = params[a.id]
        g = member_of.get(a.id)
        if g is not None and len(g) > 1:
            key = tuple(g)
            if key not in centroids:
                centroids[key] = np.mean([crowd.get(m).position for m in g], axis=0)
            c = centroids[key]
        else:
            c = a.position
        v = group_preferred_velocity(a, c, p.group_cohesion, p.pref_speed)
        if a.kind is AgentKind.PEDESTRIAN:
            for disc in discs:
                v = _detour(a.position[0], a.position[1], a.radius, v, disc)
        gd = math.hypot(a.goal[0] - a.position[0], a.goal[1] - a.position[1])
        sp = math.hypot(v[0], v[1])
        if sp * dt > gd and sp > 0:
            v = np.asarray(v) * (gd / (sp * dt))
        out[a.id] = (float(v[0]), float(v[1]))
    return out


def advance(crowd: CrowdState, params: dict, world: WorldGeometry, dt: float, groups=(),
            active=None, discs=(), external=None):
    """One closed-loop step: preferred velocities, avoidance, Euler integration.

    ``external`` supplies velocities for agents not simulated here (robots).
    Returns the new crowd and the step result.
    """
    prefs = preferred_velocities(crowd, params, dt, groups, active, discs)
    external = external or {}
    staged = []
    for a in crowd.agents:
        if a.id in prefs:
            a = evolve(a, preferred_velocity=prefs[a.id])
        elif a.id in external:
            # externally driven agents commit first, so everyone else reacts to their actual motion
            v = external[a.id]
            a = evolve(a, current_velocity=(float(v[0]), float(v[1])))
        staged.append(a)
    staged = CrowdState(tuple(staged), crowd.time)
    act = set(prefs) if active is None else set(active) & set(prefs)
    result = rvo_step(staged, params, world, dt, active=act)
    velocities = dict(result.velocities)
    velocities.update(external)
    return integrate_crowd(staged, velocities, dt), result


# --------------------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class Trajectory:
    agent_id: int
    samples: tuple
    kind: AgentKind = AgentKind.PEDESTRIAN

    def __post_init__(self):
        samples = tuple((int(f), (float(p[0]), float(p[1]))) for f, p in self.samples)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "kind", AgentKind(self.kind))
        frames = [f for f, _ in samples]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise InputError(f"trajectory {self.agent_id}: frames must be strictly increasing")
        if len(frames) > 2 and len(set(np.diff(frames))) > 1:
            raise InputError(f"trajectory {self.agent_id}: frame interval must be uniform")

    @property
    def frames(self):
        return [f for f, _ in self.samples]

    @property
    def positions(self):
        return np.array([p for _, p in self.samples], dtype=float).reshape(-1, 2)

    def position_at(self, frame):
        for f, p in self.samples:
            if f == frame:
                return p
        return None

    def window(self, length):
        return replace(self, samples=self.samples[-length:])


TRAJECTORY_HEADER = "frame\tagent_id\tkind\tx\ty"


def format_trajectories(trajectories) -> str:
    rows = []
    for t in trajectories:
        for f, (x, y) in t.samples:
            rows.append((f, t.agent_id, t.kind.value, x, y))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = [TRAJECTORY_HEADER]
    lines.extend(f"{f}\t{i}\t{k}\t{x:.9f}\t{y:.9f}" for f, i, k, x, y in rows)
    return "\n".join(lines) + "\n"


def parse_trajectories(text: str) -> dict:
    """Parse tab-separated trajectory text into ``{agent_id: Trajectory}``."""
    lines = text.split("\n")
    if not lines or lines[0].rstrip("\r") != TRAJECTORY_HEADER:
        raise ParseError(f"expected header {TRAJECTORY_HEADER!r}", line=1)
    samples = {}
    kinds = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) != 5:
            raise ParseError(f"expected 5 tab-separated fields, got {len(parts)}", line=lineno)
        try:
            frame, aid = int(parts[0]), int(parts[1])
            kind = AgentKind(parts[2])
            x, y = float(parts[3]), float(parts[4])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if frame < 0:
            raise ParseError("frame must be non-negative", line=lineno)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError("coordinates must be finite", line=lineno)
        samples.setdefault(aid, []).append((frame, (x, y)))
        kinds[aid] = kind
    out = {}
    for aid in sorted(samples):
        try:
            out[aid] = Trajectory(aid, sorted(samples[aid]), kinds[aid])
        except InputError as exc:
            raise ParseError(str(exc)) from None
    return out


# --------------------------------------------------------------------------- simulate

@dataclass
class SimReport:
    steps: int = 0
    infeasible_steps: int = 0
    collisions: int = 0
    min_separation: float = math.inf
    planning_times: list = field(default_factory=list)

    @property
    def mean_step_time(self):
        return float(np.mean(self.planning_times)) if self.planning_times else 0.0


class SimulationResult(NamedTuple):
    trajectories: dict
    report: SimReport
    final: CrowdState


class RobotControl(NamedTuple):
    velocities: dict
    invisibility: float


def separation_violations(crowd: CrowdState, tol=1e-6):
    """Pairs ``(i, j)`` whose centre distance is below ``r_i + r_j - tol``, plus the min gap."""
    pos = crowd.positions()
    radii = np.array([a.radius for a in crowd.agents])
    n = len(pos)
    if n < 2:
        return [], math.inf
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    gap = dist - (radii[:, None] + radii[None, :])
    iu = np.triu_indices(n, 1)
    ids = crowd.ids
    bad = [(ids[i], ids[j]) for i, j in zip(*iu) if gap[i, j] < -tol]
    return bad, float(gap[iu].min())


def initial_crowd(scenario, rng=None):
    """Pedestrians then robots, ids 0..n-1 and n..n+m-1."""
    agents = []
    jitter = float(getattr(scenario, "start_jitter", 0.0) or 0.0)
    for i, ped in enumerate(scenario.pedestrians):
        start = np.asarray(ped.start, float)
        if jitter > 0 and rng is not None:
            start = start + rng.uniform(-jitter, jitter, size=2)
        agents.append(AgentState(i, AgentKind.PEDESTRIAN, start, radius=ped.params.radius, goal=ped.goal))
    base = len(agents)
    rg = scenario.robots
    for k, (start, goal) in enumerate(zip(rg.starts, rg.goals)):
        agents.append(AgentState(base + k, AgentKind.ROBOT, start, radius=rg.body_radius, goal=goal))
    return CrowdState(tuple(agents), 0.0)


def simulate(scenario, controller: Callable | None = None, reaction_gain=None) -> SimulationResult:
    """Run the closed loop for ``duration / dt`` steps.

    ``controller(crowd, step)`` returns a :class:`RobotControl` with robot
    velocities and the robot group's current invisibility; without one, robots
    are simulated like pedestrians with the group's default parameters.
    """
    if scenario.dt <= 0 or scenario.duration <= 0:
        raise ValidationError("dt and duration must be positive")
    rng = np.random.default_rng(scenario.seed)
    crowd = initial_crowd(scenario, rng)
    if reaction_gain is None:
        reaction_gain = getattr(scenario, "reaction_gain", DEFAULT_REACTION_GAIN)
    dt = scenario.dt
    params = {i: ped.params for i, ped in enumerate(scenario.pedestrians)}
    robots = [a.id for a in crowd.of_kind(AgentKind.ROBOT)]
    ped_ids = [a.id for a in crowd.of_kind(AgentKind.PEDESTRIAN)]
    groups = [tuple(g) for g in getattr(scenario, "pedestrian_groups", ())]
    if controller is None and robots:
        rp = scenario.robots.motion_params()
        for rid in robots:
            params[rid] = rp
        groups.append(tuple(robots))
    n_steps = int(round(scenario.duration / dt))
    history = {a.id: [(0, a.position)] for a in crowd.agents}
    kinds = {a.id: a.kind for a in crowd.agents}
    report = SimReport()
    colliding = set()
    bad, gap = separation_violations(crowd)
    colliding.update(bad)
    report.min_separation = gap
    for step in range(n_steps):
        external = None
        discs = ()
        active = None
        if controller is not None and robots:
            t0 = time.perf_counter()
            control = controller(crowd, step)
            report.planning_times.append(time.perf_counter() - t0)
            external = control.velocities
            active = ped_ids
            disc = reaction_disc([crowd.get(r) for r in robots], control.invisibility, reaction_gain)
            discs = (disc,) if disc is not None else ()
        crowd, result = advance(crowd, params, scenario.world, dt, groups, active, discs, external)
        report.steps += 1
        report.infeasible_steps += bool(result.infeasible)
        for a in crowd.agents:
            history[a.id].append((step + 1, a.position))
        bad, gap = separation_violations(crowd)
        colliding.update(bad)
        report.min_separation = min(report.min_separation, gap)
    report.collisions = len(colliding)
    trajectories = {i: Trajectory(i, h, kinds[i]) for i, h in history.items()}
    return SimulationResult(trajectories, report, crowd)


# --------------------------------------------------------------------------- prediction

@dataclass(frozen=True)
class Prediction:
    """Predicted positions ``positions[id]`` of shape ``(steps, 2)`` at ``dt, 2dt, ...``."""

    horizon: float
    dt: float
    positions: dict

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))


def extended_goal(agent: AgentState, horizon: float, speed: float):
    ux, uy = _unit(*agent.current_velocity)
    reach = max(10.0 * speed * horizon, 100.0)
    return (agent.position[0] + ux * reach, agent.position[1] + uy * reach)


def predict(crowd: CrowdState, fitted: dict, world: WorldGeometry, horizon: float, dt=DEFAULT_DT,
            goals: dict | None = None, groups=(), include=None) -> Prediction:
    """Roll the crowd model forward ``horizon / dt`` steps.

    Agents in ``include`` (default: all pedestrians) are simulated; goals come
    from ``goals`` when given, otherwise from extending the current velocity.
    Agents without fitted parameters walk at their current speed. Everyone
    else keeps a constant velocity.
    """
    if not horizon > 0:
        raise InputError(f"horizon must be positive, got {horizon}")
    if include is None:
        include = [a.id for a in crowd.agents if a.kind is AgentKind.PEDESTRIAN]
    include = list(include)
    goals = goals or {}
    params = {}
    staged = []
    for a in crowd.agents:
        if a.id in include:
            p = fitted.get(a.id)
            if p is None:
                p = MotionParams(radius=a.radius, pref_speed=max(a.speed, 1e-3))
            params[a.id] = p
            g = goals.get(a.id)
            if g is None:
                g = extended_goal(a, horizon, p.pref_speed)
            a = replace(a, goal=g)
        staged.append(a)
    state = CrowdState(tuple(staged), crowd.time)
    n = int(round(horizon / dt))
    out = {i: np.empty((n, 2)) for i in include}
    for k in range(n):
        state, _ = advance(state, params, world, dt, groups, active=include)
        for a in state.agents:
            if a.id in out:
                out[a.id][k] = a.position
    return Prediction(horizon, dt, out)


# --------------------------------------------------------------------------- fitting

def _norm_params(values):
    return (np.asarray(values, float) - NORMALIZATION_OFFSET) / NORMALIZATION_SCALE


def _replay(obs, others, frame_dt, params, goal, world, radius_of_others):
    """Positions of the observed agent re-simulated from its first two samples."""
    frames = [f for f, _ in obs.samples]
    pts = obs.positions
    p = pts[1]
    v = (pts[1] - pts[0]) / frame_dt
    out = []
    for k in range(1, len(frames) - 1):
        f = frames[k]
        me = AgentState(-1, AgentKind.PEDESTRIAN, p, v, radius=params.radius, goal=goal)
        agents = [me]
        for t in others:
            cur = t.position_at(f)
            prev = t.position_at(f - (frames[1] - frames[0]))
            if cur is None:
                continue
            ov = (0.0, 0.0) if prev is None else ((cur[0] - prev[0]) / frame_dt, (cur[1] - prev[1]) / frame_dt)
            agents.append(AgentState(t.agent_id, t.kind, cur, ov, radius=radius_of_others.get(t.agent_id, params.radius)))
        crowd = CrowdState(tuple(agents))
        nxt, _ = advance(crowd, {-1: params}, world, frame_dt, active=[-1])
        me = nxt.agents[0]
        p = np.array(me.position)
        v = np.array(me.current_velocity)
        out.append(p)
    return np.array(out).reshape(-1, 2)


def fit_agent_params(observed: Trajectory, context=(), prior: MotionParams | None = None, *,
                     frame_dt=DEFAULT_DT, goal=None, world: WorldGeometry | None = None,
                     window=FIT_WINDOW, lam=FIT_LAMBDA, sweeps=FIT_SWEEPS, other_radii=None,
                     grid=12) -> MotionParams:
    """MAP estimate of one pedestrian's group-analysed parameters from a trajectory window.

    Minimises squared replay error plus ``lam`` times the squared distance to
    ``prior`` in normalised units, by coordinate descent inside the parameter
    box. Parameters that do not influence the replay stay at the prior.
    """
    prior = prior or MotionParams()
    if len(observed.samples) < 5:
        raise InsufficientDataError(f"need at least 5 samples, got {len(observed.samples)}")
    obs = observed.window(window)
    if len(obs.samples) < 5:
        raise InsufficientDataError("window shorter than 5 samples")
    world = world or WorldGeometry()
    pts = obs.positions
    if goal is None:
        heading = pts[-1] - pts[0]
        ux, uy = _unit(*heading)
        goal = (pts[-1][0] + 1e3 * ux, pts[-1][1] + 1e3 * uy)
    target = pts[2:]
    others = [t for t in context if t.agent_id != observed.agent_id]
    radii = dict(other_radii or {})
    prior_vec = np.array([getattr(prior, f) for f in GP_FIELDS])
    prior_n = _norm_params(prior_vec)
    cache = {}

    def objective(vec):
        key = tuple(np.round(vec, 12))
        if key not in cache:
            p = replace(prior, **dict(zip(GP_FIELDS, map(float, vec))))
            sim_pts = _replay(obs, others, frame_dt, p, goal, world, radii)
            data = float(np.sum((sim_pts - target) ** 2))
            pen = lam * float(np.sum((_norm_params(vec) - prior_n) ** 2))
            cache[key] = data + pen
        return cache[key]

    box = [GP_BOUNDS[f][:2] for f in GP_FIELDS]
    current = np.clip(prior_vec, [b[0] for b in box], [b[1] for b in box])
    best_val = objective(current)
    for _ in range(sweeps):
        for k, (lo, hi) in enumerate(box):
            candidates = list(np.linspace(lo, hi, grid)) + [float(np.clip(prior_vec[k], lo, hi))]
            best_x = current[k]
            for x in candidates:
                trial = current.copy()
                trial[k] = x
                val = objective(trial)
                if val < best_val - 1e-15:
                    best_val, best_x = val, x
            step = (hi - lo) / (grid - 1)
            a, b = max(lo, best_x - step), min(hi, best_x + step)

            def f1(x, k=k):
                trial = current.copy()
                trial[k] = x
                return objective(trial)

            res = minimize_scalar(f1, bounds=(a, b), method="bounded", options={"xatol": 1e-6})
            if res.fun < best_val - 1e-15:
                best_val, best_x = float(res.fun), float(res.x)
            current[k] = best_x
    return replace(prior, **dict(zip(GP_FIELDS, map(float, current))))
