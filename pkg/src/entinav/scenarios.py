"""Scenario definitions, closed-loop runs for surveillance and intervention, and metrics."""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import geometry
from .core import (AgentKind, CrowdState, Group, GroupParams, MotionParams, WorldGeometry)
from .edm import (EntitativityMapping, InvisibilityMode, InvisibilitySetting)
from .errors import InputError, ValidationError
from .nav import (GOAL_TOLERANCE, GVOConfig, NavState, RobotDynamics, build_roadmap, intervention_step,
                  invisible_nav_step, plain_nav_step)
from .sim import Prediction, RobotControl, SimulationResult, initial_crowd, predict, simulate

ARRIVAL_TOLERANCE = GOAL_TOLERANCE + 0.05
OBSERVER_WINDOW = 2.0
REPREDICT_EVERY = 5  # steps between crowd-prediction refreshes
REPORT_KEYS = ("intrusions_baseline", "intrusions_ours", "intrusions_avoided", "additional_time_pct",
               "mean_step_time_us", "collisions", "uncovered_entries")


class Mode(str, Enum):
    SURVEILLANCE = "surveillance"
    INTERVENTION = "intervention"
    BASELINE = "baseline"


@dataclass(frozen=True)
class PedestrianSpec:
    start: tuple
    goal: tuple
    params: MotionParams = field(default_factory=MotionParams)

    def __post_init__(self):
        object.__setattr__(self, "start", _point(self.start, "start"))
        object.__setattr__(self, "goal", _point(self.goal, "goal"))


def _point(value, name):
    p = tuple(float(v) for v in value)
    if len(p) != 2 or not all(math.isfinite(v) for v in p):
        raise InputError(f"{name} must be a finite 2-vector, got {value!r}")
    return p


@dataclass(frozen=True)
class RobotGroupSpec:
    """The robot team. ``waypoints[i]``, if given, is robot i's patrol loop."""

    starts: tuple
    goals: tuple
    params: GroupParams = field(default_factory=GroupParams)
    body_radius: float = 0.3
    waypoints: tuple | None = None
    dynamics: RobotDynamics = field(default_factory=RobotDynamics)

    def __post_init__(self):
        object.__setattr__(self, "starts", tuple(_point(p, "start") for p in self.starts))
        object.__setattr__(self, "goals", tuple(_point(p, "goal") for p in self.goals))
        if self.waypoints is not None:
            object.__setattr__(self, "waypoints",
                               tuple(tuple(_point(p, "waypoint") for p in loop) for loop in self.waypoints))
        if not self.body_radius > 0:
            raise InputError(f"body_radius must be positive, got {self.body_radius}")

    @property
    def size(self):
        return len(self.starts)

    def motion_params(self):
        return self.params.to_motion()

    def loop(self, k):
        if self.waypoints is not None:
            return [tuple(w) for w in self.waypoints[k]]
        return [tuple(self.goals[k]), tuple(self.starts[k])]


@dataclass(frozen=True)
class Scenario:
    world: WorldGeometry
    pedestrians: tuple = ()
    robots: RobotGroupSpec = field(default_factory=lambda: RobotGroupSpec((), ()))
    zones: tuple = ()
    invisibility: InvisibilitySetting = field(default_factory=InvisibilitySetting)
    dt: float = 0.1
    duration: float = 30.0
    seed: int = 0
    mode: Mode = Mode.BASELINE
    horizon: float = 5.0
    reaction_gain: float = 3.0
    start_jitter: float = 0.0
    pedestrian_groups: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "pedestrians", tuple(self.pedestrians))
        object.__setattr__(self, "zones", tuple(geometry.as_polygon(z) for z in self.zones))

    def validate(self):
        """Raise :class:`ValidationError` naming the first violated invariant."""
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError("must be positive", "dt")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValidationError("must be positive", "duration")
        if not self.horizon > 0:
            raise ValidationError("must be positive", "horizon")

        def check_point(path, pt, clearance=0.0):
            if not self.world.contains(pt):
                raise ValidationError(f"point {tuple(pt)} outside world bounds", path)
            if self.world.in_obstacle(pt):
                raise ValidationError(f"point {tuple(pt)} inside an obstacle", path)

        for i, p in enumerate(self.pedestrians):
            check_point(f"pedestrians[{i}].start", p.start)
            check_point(f"pedestrians[{i}].goal", p.goal)
        rg = self.robots
        if len(rg.starts) != len(rg.goals):
            raise ValidationError("starts and goals differ in length", "robots")
        for i, (s, g) in enumerate(zip(rg.starts, rg.goals)):
            check_point(f"robots.starts[{i}]", s)
            check_point(f"robots.goals[{i}]", g)
        if rg.waypoints is not None:
            for i, loop in enumerate(rg.waypoints):
                for j, w in enumerate(loop):
                    check_point(f"robots.waypoints[{i}][{j}]", w)
        for i, z in enumerate(self.zones):
            if not geometry.is_simple(z):
                raise ValidationError("zone is not a simple polygon", f"zones[{i}]")
        if self.mode is Mode.INTERVENTION and not self.zones:
            raise ValidationError("intervention needs at least one zone", "zones")
        if self.mode is Mode.INTERVENTION and not rg.starts:
            raise ValidationError("intervention needs robots", "robots")
        return self


@dataclass
class RunReport:
    intrusions: int = 0
    intrusions_baseline: int | None = None
    additional_time_pct: float | None = None
    mean_step_time: float = 0.0
    collisions: int = 0
    uncovered_entries: int = 0
    arrival_time: float | None = None
    trajectories: dict = field(default_factory=dict, repr=False)

    @property
    def mean_step_time_us(self):
        return self.mean_step_time * 1e6

    @property
    def intrusions_avoided(self):
        if self.intrusions_baseline is None:
            return None
        return self.intrusions_baseline - self.intrusions

    def as_dict(self, timing=True):
        return {
            "intrusions_baseline": self.intrusions_baseline,
            "intrusions_ours": self.intrusions,
            "intrusions_avoided": self.intrusions_avoided,
            "additional_time_pct": self.additional_time_pct,
            "mean_step_time_us": round(self.mean_step_time_us, 3) if timing else None,
            "collisions": self.collisions,
            "uncovered_entries": self.uncovered_entries,
        }

    def to_json(self, timing=True):
        return json.dumps(self.as_dict(timing), indent=2) + "\n"


# --------------------------------------------------------------------------- metrics

def count_intrusions(trajectories, zone) -> int:
    """Distinct pedestrians strictly inside ``zone`` at any recorded frame."""
    poly = geometry.as_polygon(zone)
    if not geometry.is_simple(poly):
        raise InputError("zone must be a simple, non-degenerate polygon")
    trajs = trajectories.values() if isinstance(trajectories, dict) else trajectories
    count = 0
    for t in trajs:
        if getattr(t, "kind", AgentKind.PEDESTRIAN) is not AgentKind.PEDESTRIAN:
            continue
        if geometry.points_in_polygon(t.positions, poly).any():
            count += 1
    return count


def intruders(trajectories, zones):
    out = set()
    for z in zones:
        poly = geometry.as_polygon(z)
        for t in trajectories.values():
            if t.kind is AgentKind.PEDESTRIAN and geometry.points_in_polygon(t.positions, poly).any():
                out.add(t.agent_id)
    return out


def compute_overhead(time_ours: float, time_baseline: float) -> float:
    if not time_baseline > 0:
        raise InputError(f"baseline time must be positive, got {time_baseline}")
    return 100.0 * (time_ours - time_baseline) / time_baseline


def arrival_time(trajectory, goal, dt, tolerance=ARRIVAL_TOLERANCE):
    pos = trajectory.positions
    hit = np.flatnonzero(np.hypot(*(pos - np.asarray(goal)).T) <= tolerance)
    if len(hit) == 0:
        return None
    return float(trajectory.frames[hit[0]] * dt)


# --------------------------------------------------------------------------- controllers

class TeamController:
    """Closed-loop robot planner: observes pedestrians, predicts, and issues GVO commands."""

    def __init__(self, scenario: Scenario, arm: Mode, mapping: EntitativityMapping | None = None):
        self.scenario = scenario
        self.arm = Mode(arm)
        self.mapping = mapping or EntitativityMapping.reference()
        rg = scenario.robots
        n_peds = len(scenario.pedestrians)
        self.robot_ids = list(range(n_peds, n_peds + rg.size))
        self.group = Group(self.robot_ids, rg.motion_params())
        self.loops = {rid: rg.loop(k) for k, rid in enumerate(self.robot_ids)}
        self.loop_index = {rid: 0 for rid in self.robot_ids}
        goals = {rid: self.loops[rid][0] for rid in self.robot_ids}
        headings = {}
        for k, rid in enumerate(self.robot_ids):
            d = np.subtract(goals[rid], rg.starts[k])
            headings[rid] = float(math.atan2(d[1], d[0])) if np.hypot(*d) > 0 else 0.0
        roadmap = None
        if scenario.world.obstacles:
            roadmap = build_roadmap(scenario.world, rg.body_radius + 0.1)
        self.nav = NavState(goals, headings, roadmap, rg.dynamics, GVOConfig(), scenario.dt,
                            {i: p.params.radius for i, p in enumerate(scenario.pedestrians)})
        self.ped_params = {i: p.params for i, p in enumerate(scenario.pedestrians)}
        self.history = {}
        self.uncovered = set()
        self.step_times = []
        self._cache = None

    def _observe(self, crowd):
        for a in crowd.agents:
            if a.kind is AgentKind.PEDESTRIAN:
                self.history.setdefault(a.id, []).append(a.position)

    def _observed_model(self, crowd):
        """Goal and speed guesses from each pedestrian's recent track."""
        window = max(1, int(round(OBSERVER_WINDOW / self.scenario.dt)))
        goals, fitted = {}, {}
        for a in crowd.agents:
            if a.kind is not AgentKind.PEDESTRIAN:
                continue
            track = self.history.get(a.id, [a.position])
            past = np.asarray(track[max(0, len(track) - 1 - window)])
            now = np.asarray(a.position)
            span = (len(track) - 1 - max(0, len(track) - 1 - window)) * self.scenario.dt
            heading = now - past
            if np.hypot(*heading) < 1e-6:
                heading = np.asarray(a.current_velocity)
            n = np.hypot(*heading)
            speed = n / span if span > 0 else a.speed
            if n < 1e-9:
                goals[a.id] = a.position
            else:
                goals[a.id] = tuple(now + heading / n * 100.0)
            base = self.ped_params.get(a.id, MotionParams())
            fitted[a.id] = replace(base, pref_speed=float(np.clip(speed, 0.3, 2.2)), radius=a.radius)
        return goals, fitted

    def _advance_patrol(self, crowd):
        if self.arm is not Mode.SURVEILLANCE:
            return
        for rid in self.robot_ids:
            loop = self.loops[rid]
            pos = np.asarray(crowd.get(rid).position)
            if np.hypot(*(pos - loop[self.loop_index[rid]])) <= GOAL_TOLERANCE:
                self.loop_index[rid] = (self.loop_index[rid] + 1) % len(loop)
                self.nav.goals[rid] = loop[self.loop_index[rid]]

    def _predictions(self, crowd, step):
        """Planning prediction (robots present) and, for intervention, the robot-free one.

        Both are refreshed every ``REPREDICT_EVERY`` steps over a horizon long
        enough to be served as shifted slices in between.
        """
        dt = self.scenario.dt
        slack = REPREDICT_EVERY * dt
        if self._cache is None or step - self._cache[0] >= REPREDICT_EVERY:
            goals, fitted = self._observed_model(crowd)
            world = self.scenario.world
            long_plan = predict(crowd, fitted, world, self.group.params.planning_horizon + slack, dt, goals=goals)
            long_naive = None
            if self.arm is Mode.INTERVENTION:
                peds = CrowdState(tuple(a for a in crowd.agents if a.kind is AgentKind.PEDESTRIAN), crowd.time)
                long_naive = predict(peds, fitted, world, self.scenario.horizon + slack, dt, goals=goals)
            self._cache = (step, long_plan, long_naive)
        made, long_plan, long_naive = self._cache
        offset = step - made
        plan = _shifted(long_plan, offset, self.group.params.planning_horizon, crowd)
        naive = None if long_naive is None else _shifted(long_naive, offset, self.scenario.horizon, crowd)
        return plan, naive

    def __call__(self, crowd: CrowdState, step: int) -> RobotControl:
        t0 = time.perf_counter()
        self._observe(crowd)
        self._advance_patrol(crowd)
        world = self.scenario.world
        plan_pred, naive = self._predictions(crowd, step)
        if self.arm is Mode.BASELINE:
            cmds = plain_nav_step(self.group, crowd, world, plan_pred, self.nav, self.mapping)
            s = cmds[0].invisibility_used if cmds else 1.0
        elif self.arm is Mode.SURVEILLANCE:
            setting = self.scenario.invisibility
            s = setting.s if setting.mode is InvisibilityMode.FIXED_S else 1.0
            cmds = invisible_nav_step(self.group, crowd, world, self.mapping, s, plan_pred, self.nav)
        else:
            setting = self.scenario.invisibility
            s_min = setting.s_min if setting.mode is InvisibilityMode.LOWER_BOUND else setting.s
            result = intervention_step(self.group, crowd, world, self.mapping, self.scenario.zones, s_min,
                                       naive, self.scenario.horizon, self.nav, planning_prediction=plan_pred)
            cmds = result.commands
            s = result.invisibility_used
            self.uncovered.update(e.pedestrian_id for e in result.uncovered)
        self.nav.apply(cmds)
        self.step_times.append(time.perf_counter() - t0)
        return RobotControl({c.robot_id: c.velocity for c in cmds}, s)


def _shifted(prediction: Prediction, offset: int, horizon: float, crowd: CrowdState) -> Prediction:
    """The window of ``prediction`` starting ``offset`` steps later, anchored at current positions."""
    if offset == 0 and abs(prediction.horizon - horizon) < 1e-12:
        return prediction
    steps = int(round(horizon / prediction.dt))
    out = {}
    for pid, path in prediction.positions.items():
        window = path[offset:offset + steps]
        if offset > 0:
            # keep the predicted motion but re-anchor it on where the pedestrian actually is
            window = window - path[offset - 1] + np.asarray(crowd.get(pid).position)
        out[pid] = window
    return Prediction(horizon, prediction.dt, out)


# --------------------------------------------------------------------------- runs

def run_arm(scenario: Scenario, arm: Mode, mapping=None):
    """One closed-loop run; returns ``(RunReport, SimulationResult)``."""
    scenario.validate()
    controller = TeamController(scenario, arm, mapping) if scenario.robots.size else None
    result: SimulationResult = simulate(scenario, controller)
    report = RunReport()
    report.trajectories = result.trajectories
    report.intrusions = len(intruders(result.trajectories, scenario.zones))
    report.collisions = result.report.collisions
    if controller is not None:
        report.mean_step_time = float(np.mean(controller.step_times)) if controller.step_times else 0.0
        report.uncovered_entries = len(controller.uncovered)
        times = []
        for k, rid in enumerate(controller.robot_ids):
            times.append(arrival_time(result.trajectories[rid], scenario.robots.goals[k], scenario.dt))
        report.arrival_time = None if any(t is None for t in times) else max(times)
    return report, result


def _threads():
    try:
        n = int(os.environ.get("ENTINAV_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def run_intervention(scenario: Scenario, mapping=None):
    """Paired run: intervention arm and socially unaware baseline on the same seed.

    Returns ``(ours, baseline)`` reports; ``ours`` carries the baseline
    intrusion count and the arrival-time overhead.
    """
    if Mode(scenario.mode) is not Mode.INTERVENTION:
        raise ValidationError("scenario mode must be 'intervention'", "mode")
    scenario.validate()
    base_scn = replace(scenario, mode=Mode.BASELINE)
    if _threads() > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            f_ours = pool.submit(run_arm, scenario, Mode.INTERVENTION, mapping)
            f_base = pool.submit(run_arm, base_scn, Mode.BASELINE, mapping)
            ours, _ = f_ours.result()
            base, _ = f_base.result()
    else:
        ours, _ = run_arm(scenario, Mode.INTERVENTION, mapping)
        base, _ = run_arm(base_scn, Mode.BASELINE, mapping)
    ours.intrusions_baseline = base.intrusions
    base.intrusions_baseline = base.intrusions
    if ours.arrival_time is not None and base.arrival_time:
        ours.additional_time_pct = compute_overhead(ours.arrival_time, base.arrival_time)
    elif ours.arrival_time is None and base.arrival_time is None and not scenario.robots.size:
        ours.additional_time_pct = 0.0
    if not scenario.robots.size:
        ours.additional_time_pct = 0.0
    return ours, base


def run_surveillance(scenario: Scenario, mapping=None) -> RunReport:
    if Mode(scenario.mode) is not Mode.SURVEILLANCE:
        raise ValidationError("scenario mode must be 'surveillance'", "mode")
    report, _ = run_arm(scenario, Mode.SURVEILLANCE, mapping)
    return report


def run(scenario: Scenario, mapping=None):
    """Dispatch on ``scenario.mode``; returns the primary report (and baseline for intervention)."""
    mode = Mode(scenario.mode)
    if mode is Mode.INTERVENTION:
        return run_intervention(scenario, mapping)
    if mode is Mode.SURVEILLANCE:
        return run_surveillance(scenario, mapping), None
    report, _ = run_arm(scenario, Mode.BASELINE, mapping)
    return report, None


# --------------------------------------------------------------------------- stock scenarios

def square(center, side):
    cx, cy = center
    h = side / 2
    return ((cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h))


def circle_scenario(n=8, radius=10.0, params=None, duration=30.0, seed=0):
    """``n`` pedestrians evenly spaced on a circle, each heading to the antipode."""
    params = params or MotionParams()
    peds = []
    for k in range(n):
        a = 2 * math.pi * k / n
        start = (radius * math.cos(a), radius * math.sin(a))
        peds.append(PedestrianSpec(start, (-start[0], -start[1]), params))
    world = WorldGeometry((-radius - 5, -radius - 5, radius + 5, radius + 5))
    return Scenario(world, peds, duration=duration, seed=seed)


def dense_crowd_pedestrians(n=50, density=2.0, radius=0.25, origin=(0.0, 0.0), travel=20.0, seed=0):
    """Pedestrians on a jittered square lattice at ``density`` per m^2, split into two opposing streams."""
    rng = np.random.default_rng(seed)
    spacing = 1.0 / math.sqrt(density)
    side = int(math.ceil(math.sqrt(n)))
    params = MotionParams(radius=radius, pref_speed=1.3, neighbor_dist=5.0)
    peds = []
    ox = origin[0] - spacing * (side - 1) / 2
    oy = origin[1] - spacing * (side - 1) / 2
    for k in range(n):
        r, c = divmod(k, side)
        start = np.array([ox + c * spacing, oy + r * spacing]) + rng.uniform(-0.05, 0.05, 2)
        direction = 1.0 if r % 2 == 0 else -1.0
        goal = start + np.array([direction * travel, 0.0])
        peds.append(PedestrianSpec(tuple(start), tuple(goal), params))
    return peds


def dense_crowd_scenario(n=50, density=2.0, duration=20.0, seed=0, robots=False):
    peds = dense_crowd_pedestrians(n, density, seed=seed)
    world = WorldGeometry((-30.0, -30.0, 30.0, 30.0))
    rg = RobotGroupSpec((), ())
    if robots:
        rg = RobotGroupSpec(((-12.0, -2.0), (-12.0, 0.0), (-12.0, 2.0)),
                            ((12.0, -2.0), (12.0, 0.0), (12.0, 2.0)))
    return Scenario(world, peds, rg, duration=duration, seed=seed,
                    mode=Mode.SURVEILLANCE if robots else Mode.BASELINE)


def surveillance_scenario(n=50, density=2.0, duration=60.0, seed=0):
    """Dense crowd with three robots patrolling back and forth through it."""
    peds = dense_crowd_pedestrians(n, density, seed=seed)
    world = WorldGeometry((-30.0, -30.0, 30.0, 30.0))
    starts = ((-12.0, -3.0), (-12.0, 0.0), (-12.0, 3.0))
    goals = ((12.0, -3.0), (12.0, 0.0), (12.0, 3.0))
    rg = RobotGroupSpec(starts, goals)
    return Scenario(world, peds, rg, duration=duration, seed=seed, mode=Mode.SURVEILLANCE)


def mid_density_surveillance_scenario(seed=0):
    """Synthetic stand-in sized like the 15-pedestrian, 450-frame surveillance clip."""
    rng = np.random.default_rng(seed)
    params = MotionParams(radius=0.3, pref_speed=1.3)
    peds = []
    for k in range(15):
        y = -6.0 + 12.0 * k / 14
        if k % 2:
            peds.append(PedestrianSpec((-14.0 + rng.uniform(0, 3), y), (14.0, y + rng.uniform(-2, 2)), params))
        else:
            peds.append(PedestrianSpec((14.0 - rng.uniform(0, 3), y), (-14.0, y + rng.uniform(-2, 2)), params))
    world = WorldGeometry((-16.0, -16.0, 16.0, 16.0))
    rg = RobotGroupSpec(((0.0, -12.0), (-2.0, -12.0), (2.0, -12.0)),
                        ((0.0, 12.0), (-2.0, 12.0), (2.0, 12.0)))
    return Scenario(world, peds, rg, duration=45.0, seed=seed, mode=Mode.SURVEILLANCE)


def canonical_intervention_scenario(s_min=0.3, seed=0, n_pedestrians=8, duration=40.0):
    """Pedestrians stream north through a 4x4 m restricted zone while three robots cross the area."""
    rng = np.random.default_rng(seed)
    params = MotionParams(radius=0.3, pref_speed=1.3)
    peds = []
    for k in range(n_pedestrians):
        x = -1.2 + 2.4 * (k % 3) / 2 + rng.uniform(-0.2, 0.2)
        y = -11.0 - 1.6 * k
        peds.append(PedestrianSpec((x, y), (x + rng.uniform(-0.5, 0.5), 16.0), params))
    world = WorldGeometry((-25.0, -30.0, 25.0, 20.0))
    starts = ((-14.0, -7.0), (-15.0, -8.0), (-16.0, -6.0))
    goals = ((16.0, -7.0), (16.0, -8.0), (16.0, -6.0))
    # nominal cruise at the least entitative setting, so both arms travel at the same speed
    rg = RobotGroupSpec(starts, goals, GroupParams.minima())
    return Scenario(world, peds, rg, zones=(square((0.0, 0.0), 4.0),),
                    invisibility=InvisibilitySetting(InvisibilityMode.LOWER_BOUND, 1.0, s_min),
                    duration=duration, seed=seed, mode=Mode.INTERVENTION)


def performance_scene(seed=0):
    """Three robots inside the 50-pedestrian crowd, ready for one timed planning step.

    Returns ``(controller, crowd)``; the controller has not planned yet.
    """
    base = surveillance_scenario(seed=seed)
    robots = RobotGroupSpec(((-1.0, -0.5), (0.2, 0.9), (0.9, -0.9)), ((12.0, 0.0), (12.0, 1.0), (12.0, -1.0)))
    scn = replace(base, robots=robots)
    crowd = initial_crowd(scn)
    return TeamController(scn, Mode.SURVEILLANCE), crowd
