"""Command-line entry point: ``entinav <subcommand> [flags]``.

Exit status: 0 on success, 1 on usage or validation errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .core import GP_FIELDS, AgentKind, AgentState, CrowdState, GroupParams, MotionParams, WorldGeometry
from .edm import (E_FIELDS, EntitativityMapping, InvisibilityMode, InvisibilitySetting, aggregate_responses, entitativity,
                  fit_mapping, format_matrix, params_for_entitativity, parse_matrix, parse_responses,
                  study_statistics, target_entitativity)
from .errors import (BoundViolation, ConfigurationError, EntinavError, FitError, IncompleteDataError, InputError,
                     InsufficientDataError, ParseError, StatisticsError, ValidationError)
from .nav import RobotDynamics, invisible_nav_step
from .scenarios import (Mode, PedestrianSpec, RobotGroupSpec, Scenario, dense_crowd_scenario, performance_scene,
                        run_arm, run_intervention)
from .sim import (Trajectory, advance, fit_agent_params, format_trajectories, initial_crowd, parse_trajectories,
                  predict)

log = logging.getLogger("entinav")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
SCENARIO_FIELDS = ("world", "obstacles", "pedestrians", "robots", "zones", "invisibility", "dt", "duration",
                   "seed", "mode", "horizon")


class UsageError(InputError):
    pass


# --------------------------------------------------------------------------- scenario text

def _line_map(text):
    """``{field path: 1-based line}`` for every node of the YAML document."""
    lines = {}
    root = yaml.compose(text, Loader=yaml.SafeLoader)

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = str(k.value)
                walk(v, f"{path}.{key}" if path else key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    if root is not None:
        walk(root, "")
    return lines


class _Reader:
    def __init__(self, lines):
        self.lines = lines

    def line(self, path):
        while path:
            if path in self.lines:
                return self.lines[path]
            cut = max(path.rfind("."), path.rfind("["))
            path = path[:cut] if cut > 0 else ""
        return self.lines.get("")

    def fail(self, path, message):
        raise ValidationError(message, path, self.line(path))

    def number(self, value, path, positive=False, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if integer and int(value) != value:
            self.fail(path, f"expected an integer, got {value!r}")
        if not math.isfinite(value):
            self.fail(path, "must be finite")
        if positive and value <= 0:
            self.fail(path, "must be positive")
        return int(value) if integer else float(value)

    def point(self, value, path):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            self.fail(path, f"expected [x, y], got {value!r}")
        return tuple(self.number(v, f"{path}[{i}]") for i, v in enumerate(value))

    def points(self, value, path, minimum=0):
        if not isinstance(value, list):
            self.fail(path, "expected a list of [x, y] points")
        if len(value) < minimum:
            self.fail(path, f"expected at least {minimum} points")
        return tuple(self.point(v, f"{path}[{i}]") for i, v in enumerate(value))

    def mapping(self, value, path, allowed):
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        for key in value:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else str(key), f"unknown field (expected one of {', '.join(allowed)})")
        return value


def parse_scenario(text: str) -> Scenario:
    """Build a validated :class:`Scenario` from YAML text.

    Syntax errors raise :class:`ParseError` with line and column; semantic
    errors raise :class:`ValidationError` naming the field path and line.
    """
    try:
        data = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ParseError(exc.problem or str(exc), line=mark.line + 1 if mark else None,
                         column=mark.column + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from None
    r = _Reader(lines)
    data = r.mapping(data, "", SCENARIO_FIELDS)

    world_spec = r.mapping(data.get("world"), "world", ("bounds",))
    bounds = world_spec.get("bounds", list(WorldGeometry().bounds))
    if not isinstance(bounds, list) or len(bounds) != 4:
        r.fail("world.bounds", "expected [xmin, ymin, xmax, ymax]")
    bounds = tuple(r.number(v, f"world.bounds[{i}]") for i, v in enumerate(bounds))
    obstacles = [r.points(o, f"obstacles[{i}]", 3) for i, o in enumerate(data.get("obstacles") or [])]
    try:
        world = WorldGeometry(bounds, obstacles)
    except InputError as exc:
        r.fail("obstacles" if obstacles else "world.bounds", str(exc))

    pedestrians = []
    for i, spec in enumerate(data.get("pedestrians") or []):
        path = f"pedestrians[{i}]"
        spec = r.mapping(spec, path, ("start", "goal", "params"))
        if "start" not in spec or "goal" not in spec:
            r.fail(path, "pedestrian needs start and goal")
        pedestrians.append(PedestrianSpec(r.point(spec["start"], f"{path}.start"), r.point(spec["goal"], f"{path}.goal"),
                                          _motion_params(r, spec.get("params"), f"{path}.params")))

    robots = _robots(r, data.get("robots"))
    zones = [r.points(z, f"zones[{i}]", 3) for i, z in enumerate(data.get("zones") or [])]

    inv = r.mapping(data.get("invisibility"), "invisibility", ("mode", "s", "s_min"))
    try:
        mode = InvisibilityMode(inv.get("mode", InvisibilityMode.FIXED_S.value))
    except ValueError:
        r.fail("invisibility.mode", f"expected fixed_s or lower_bound, got {inv.get('mode')!r}")
    values = {}
    for key, default in (("s", 1.0), ("s_min", 0.0)):
        values[key] = r.number(inv.get(key, default), f"invisibility.{key}")
        if not 0.0 <= values[key] <= 1.0:
            r.fail(f"invisibility.{key}", f"{key}={values[key]!r} outside [0, 1]")
    invisibility = InvisibilitySetting(mode, values["s"], values["s_min"])

    try:
        run_mode = Mode(data.get("mode", Mode.BASELINE.value))
    except ValueError:
        r.fail("mode", f"expected surveillance, intervention or baseline, got {data.get('mode')!r}")
    seed = r.number(data.get("seed", 0), "seed", integer=True)
    if seed < 0:
        r.fail("seed", "must be non-negative")
    try:
        scenario = Scenario(world, tuple(pedestrians), robots, tuple(zones), invisibility,
                            dt=r.number(data.get("dt", 0.1), "dt", positive=True),
                            duration=r.number(data.get("duration", 30.0), "duration", positive=True),
                            seed=seed, mode=run_mode,
                            horizon=r.number(data.get("horizon", 5.0), "horizon", positive=True))
    except ValidationError:
        raise
    except InputError as exc:
        r.fail("zones", str(exc))
    return validate_scenario(scenario, r)


def validate_scenario(scenario: Scenario, reader: _Reader | None = None) -> Scenario:
    try:
        return scenario.validate()
    except ValidationError as exc:
        if reader is None or exc.line is not None:
            raise
        message = str(exc).split(": ", 1)[-1] if exc.path else str(exc)
        raise ValidationError(message, exc.path, reader.line(exc.path or "")) from None


def _motion_params(r, spec, path):
    spec = r.mapping(spec, path, ("neighbor_dist", "max_neighbors", "planning_horizon", "radius", "pref_speed",
                                  "group_cohesion"))
    values = {k: r.number(v, f"{path}.{k}", integer=(k == "max_neighbors")) for k, v in spec.items()}
    try:
        return MotionParams(**values)
    except BoundViolation as exc:
        r.fail(f"{path}.{exc.field}", str(exc))


def _robots(r, spec):
    path = "robots"
    spec = r.mapping(spec, path, ("starts", "goals", "size", "params", "body_radius", "waypoints", "dynamics"))
    if not spec:
        return RobotGroupSpec((), ())
    starts = r.points(spec.get("starts", []), f"{path}.starts")
    goals = r.points(spec.get("goals", []), f"{path}.goals")
    if len(starts) != len(goals):
        r.fail(f"{path}.goals", f"{len(goals)} goals for {len(starts)} starts")
    if "size" in spec and r.number(spec["size"], f"{path}.size", integer=True) != len(starts):
        r.fail(f"{path}.size", f"size {spec['size']} does not match {len(starts)} starts")
    params = r.mapping(spec.get("params"), f"{path}.params", GP_FIELDS)
    values = {k: r.number(v, f"{path}.params.{k}") for k, v in params.items()}
    try:
        gp = GroupParams(**values)
    except BoundViolation as exc:
        r.fail(f"{path}.params.{exc.field}", str(exc))
    waypoints = None
    if spec.get("waypoints") is not None:
        loops = spec["waypoints"]
        if not isinstance(loops, list) or len(loops) != len(starts):
            r.fail(f"{path}.waypoints", "expected one waypoint list per robot")
        waypoints = tuple(r.points(loop, f"{path}.waypoints[{i}]", 1) for i, loop in enumerate(loops))
    dyn = r.mapping(spec.get("dynamics"), f"{path}.dynamics", ("v_max", "v_min", "omega_max"))
    try:
        dynamics = RobotDynamics(**{k: r.number(v, f"{path}.dynamics.{k}") for k, v in dyn.items()})
    except InputError as exc:
        r.fail(f"{path}.dynamics", str(exc))
    body = r.number(spec.get("body_radius", 0.3), f"{path}.body_radius", positive=True)
    return RobotGroupSpec(starts, goals, gp, body, waypoints, dynamics)


def format_scenario(scenario: Scenario) -> str:
    """YAML text that :func:`parse_scenario` reads back into an equal scenario."""
    rg = scenario.robots

    def pts(seq):
        return [[float(x), float(y)] for x, y in seq]

    doc = {
        "world": {"bounds": list(scenario.world.bounds)},
        "obstacles": [pts(o) for o in scenario.world.obstacles],
        "pedestrians": [{"start": list(p.start), "goal": list(p.goal),
                         "params": {k: getattr(p.params, k) for k in ("neighbor_dist", "max_neighbors",
                                                                      "planning_horizon", "radius", "pref_speed",
                                                                      "group_cohesion")}}
                        for p in scenario.pedestrians],
        "zones": [pts(z) for z in scenario.zones],
        "invisibility": {"mode": scenario.invisibility.mode.value, "s": scenario.invisibility.s,
                         "s_min": scenario.invisibility.s_min},
        "dt": scenario.dt, "duration": scenario.duration, "seed": scenario.seed,
        "mode": scenario.mode.value, "horizon": scenario.horizon,
    }
    if rg.size:
        doc["robots"] = {"starts": pts(rg.starts), "goals": pts(rg.goals), "params": rg.params.as_dict(),
                         "body_radius": rg.body_radius,
                         "dynamics": {"v_max": rg.dynamics.v_max, "v_min": rg.dynamics.v_min,
                                      "omega_max": rg.dynamics.omega_max}}
        if rg.waypoints is not None:
            doc["robots"]["waypoints"] = [pts(loop) for loop in rg.waypoints]
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


# --------------------------------------------------------------------------- config

@dataclass(frozen=True)
class Config:
    scenario: Path | None = None
    out: Path = Path(".")
    dt: float | None = None
    seed: int | None = None
    s: float | None = None
    s_min: float | None = None
    mapping: Path | None = None
    horizon: float | None = None
    input: Path | None = None
    timing: bool = True
    allow_fractional: bool = False
    verbosity: int = 0

    def __post_init__(self):
        for name in ("dt", "horizon"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ValidationError(f"must be positive, got {v}", f"--{name}")
        for name in ("s", "s_min"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValidationError(f"must lie in [0, 1], got {v}", "--" + name.replace("_", "-"))
        if self.seed is not None and self.seed < 0:
            raise ValidationError(f"must be non-negative, got {self.seed}", "--seed")

    @classmethod
    def from_args(cls, args):
        return cls(scenario=args.scenario, out=args.out, dt=args.dt, seed=args.seed, s=args.s, s_min=args.s_min,
                   mapping=args.mapping, horizon=args.horizon, input=args.input, timing=not args.no_timing,
                   allow_fractional=args.allow_fractional, verbosity=args.verbose)

    def apply(self, scenario: Scenario) -> Scenario:
        changes = {}
        if self.dt is not None:
            changes["dt"] = self.dt
        if self.seed is not None:
            changes["seed"] = self.seed
        if self.horizon is not None:
            changes["horizon"] = self.horizon
        inv = scenario.invisibility
        if self.s is not None:
            inv = InvisibilitySetting(InvisibilityMode.FIXED_S, self.s, inv.s_min)
        if self.s_min is not None:
            inv = InvisibilitySetting(InvisibilityMode.LOWER_BOUND, inv.s, self.s_min)
        changes["invisibility"] = inv
        return replace(scenario, **changes)

    def load_mapping(self):
        if self.mapping is None:
            return EntitativityMapping.reference()
        return EntitativityMapping(parse_matrix(_read(self.mapping)))


def _read(path):
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    target = out / name
    target.write_text(text)
    log.info("wrote %s", target)
    return target


def _load_scenario(cfg: Config, mode: Mode | None = None):
    if cfg.scenario is None:
        raise UsageError("--scenario is required")
    scenario = parse_scenario(_read(cfg.scenario))
    if mode is not None:
        scenario = replace(scenario, mode=mode)
    return validate_scenario(cfg.apply(scenario))


# --------------------------------------------------------------------------- subcommands

def _emit_run(cfg, report, trajectories, baseline=None):
    _write(cfg.out, "trajectories.tsv", format_trajectories(trajectories.values()))
    if baseline is not None:
        _write(cfg.out, "baseline_trajectories.tsv", format_trajectories(baseline.trajectories.values()))
    _write(cfg.out, "report.json", report.to_json(timing=cfg.timing))
    print(report.to_json(timing=cfg.timing), end="")


def cmd_simulate(cfg: Config):
    scenario = _load_scenario(cfg)
    mapping = cfg.load_mapping()
    if scenario.mode is Mode.INTERVENTION:
        ours, base = run_intervention(scenario, mapping)
        _emit_run(cfg, ours, ours.trajectories, base)
    else:
        report, _ = run_arm(scenario, scenario.mode, mapping)
        _emit_run(cfg, report, report.trajectories)


def cmd_intervene(cfg: Config):
    scenario = _load_scenario(cfg, Mode.INTERVENTION)
    ours, base = run_intervention(scenario, cfg.load_mapping())
    _emit_run(cfg, ours, ours.trajectories, base)


def cmd_surveil(cfg: Config):
    scenario = _load_scenario(cfg, Mode.SURVEILLANCE)
    report, _ = run_arm(scenario, Mode.SURVEILLANCE, cfg.load_mapping())
    _emit_run(cfg, report, report.trajectories)


def cmd_predict(cfg: Config):
    """Fit each pedestrian seen in the last frame, then roll the crowd forward."""
    if cfg.input is None:
        raise UsageError("--input trajectory file is required")
    trajectories = parse_trajectories(_read(cfg.input))
    if not trajectories:
        raise ValidationError("trajectory file has no samples", "--input")
    world = WorldGeometry()
    if cfg.scenario is not None:
        world = parse_scenario(_read(cfg.scenario)).world
    dt = cfg.dt or 0.1
    horizon = cfg.horizon or 5.0
    last = max(t.frames[-1] for t in trajectories.values())
    agents, fitted = [], {}
    for aid, tr in trajectories.items():
        if tr.frames[-1] != last:
            continue
        pts = tr.positions
        v = (pts[-1] - pts[-2]) / dt if len(pts) > 1 else np.zeros(2)
        agents.append(AgentState(aid, tr.kind, pts[-1], v, radius=MotionParams().radius))
        if tr.kind is AgentKind.PEDESTRIAN and len(tr.samples) >= 5:
            fitted[aid] = fit_agent_params(tr, trajectories.values(), frame_dt=dt, world=world)
            log.info("agent %d: %s", aid, fitted[aid])
    if not agents:
        raise ValidationError("no agent is present in the last frame", "--input")
    agents = [AgentState(a.id, a.kind, a.position, a.current_velocity,
                         radius=fitted[a.id].radius if a.id in fitted else a.radius) for a in agents]
    crowd = CrowdState(tuple(agents))
    pred = predict(crowd, fitted, world, horizon, dt)
    out = [Trajectory(aid, [(last + k + 1, tuple(p)) for k, p in enumerate(path)], AgentKind.PEDESTRIAN)
           for aid, path in sorted(pred.positions.items())]
    _write(cfg.out, "predictions.tsv", format_trajectories(out))
    params = {str(aid): {f: getattr(p, f) for f in GP_FIELDS} for aid, p in sorted(fitted.items())}
    _write(cfg.out, "fitted_params.json", json.dumps(params, indent=2) + "\n")


def cmd_fit_edm(cfg: Config):
    if cfg.input is None:
        raise UsageError("--input response file is required")
    responses = parse_responses(_read(cfg.input), allow_fractional=cfg.allow_fractional)
    mapping = fit_mapping(aggregate_responses(responses))
    _write(cfg.out, "mapping.txt", format_matrix(mapping.matrix))
    print(format_matrix(mapping.matrix), end="")


def cmd_study_stats(cfg: Config):
    if cfg.input is None:
        raise UsageError("--input response file is required")
    responses = parse_responses(_read(cfg.input), allow_fractional=cfg.allow_fractional)
    stats = study_statistics(responses)
    doc = {"items": list(E_FIELDS), "correlation": np.round(stats.correlation, 12).tolist(),
           "cronbach_alpha": round(stats.cronbach_alpha, 12),
           "explained_variance": np.round(stats.explained_variance, 12).tolist()}
    text = json.dumps(doc, indent=2) + "\n"
    _write(cfg.out, "study_stats.json", text)
    print(text, end="")


def _time_call(fn, repeats):
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e6


def cmd_bench(cfg: Config):
    mapping = cfg.load_mapping()
    gp = GroupParams()
    controller, crowd = performance_scene()
    dense = dense_crowd_scenario()
    dense_crowd = initial_crowd(dense)
    params = {i: p.params for i, p in enumerate(dense.pedestrians)}
    goals, fitted = controller._observed_model(crowd)
    horizon = controller.group.params.planning_horizon
    pred = predict(crowd, fitted, dense.world, horizon, dense.dt, goals=goals)
    e = target_entitativity(mapping, 0.5)
    timings = {
        "entitativity_us": _time_call(lambda: entitativity(mapping, gp), 2000),
        "params_for_entitativity_us": _time_call(lambda: params_for_entitativity(mapping, e), 2000),
        "crowd_step_50_us": _time_call(lambda: advance(dense_crowd, params, dense.world, dense.dt), 10),
        "prediction_50_us": _time_call(lambda: predict(crowd, fitted, dense.world, horizon, dense.dt, goals=goals), 2),
        "planning_step_3_robots_us": _time_call(
            lambda: invisible_nav_step(controller.group, crowd, dense.world, mapping, 1.0, pred, controller.nav), 10),
    }
    text = json.dumps({k: round(v, 3) for k, v in timings.items()}, indent=2) + "\n"
    _write(cfg.out, "bench.json", text)
    print(text, end="")


def cmd_export_plot_data(cfg: Config):
    """Wide per-frame table: ``frame,x_<id>,y_<id>,...`` with blanks where an agent is absent."""
    if cfg.input is None:
        raise UsageError("--input trajectory file is required")
    trajectories = parse_trajectories(_read(cfg.input))
    ids = sorted(trajectories)
    frames = sorted({f for t in trajectories.values() for f in t.frames})
    lookup = {aid: dict(t.samples) for aid, t in trajectories.items()}
    header = ["frame"] + [f"{axis}_{aid}" for aid in ids for axis in ("x", "y")]
    rows = [",".join(header)]
    for f in frames:
        cells = [str(f)]
        for aid in ids:
            p = lookup[aid].get(f)
            cells.extend(["", ""] if p is None else [f"{p[0]:.9f}", f"{p[1]:.9f}"])
        rows.append(",".join(cells))
    _write(cfg.out, "plot_data.csv", "\n".join(rows) + "\n")


COMMANDS = {
    "simulate": cmd_simulate,
    "intervene": cmd_intervene,
    "surveil": cmd_surveil,
    "predict": cmd_predict,
    "fit-edm": cmd_fit_edm,
    "study-stats": cmd_study_stats,
    "bench": cmd_bench,
    "export-plot-data": cmd_export_plot_data,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="entinav", description="Socially aware robot-group navigation tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().split("\n")[0] or None)
        p.add_argument("--scenario", type=Path)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--input", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--s", type=float)
        p.add_argument("--s-min", dest="s_min", type=float)
        p.add_argument("--mapping", type=Path)
        p.add_argument("--horizon", type=float)
        p.add_argument("--no-timing", action="store_true", help="write null timings so reports are reproducible")
        p.add_argument("--allow-fractional", action="store_true", help="accept non-integer study ratings")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = Config.from_args(args)
        logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2), format="%(levelname)s %(message)s")
        COMMANDS[args.command](cfg)
    except (InputError, IncompleteDataError, ConfigurationError, FitError, InsufficientDataError,
            StatisticsError) as exc:
        print(f"entinav: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EntinavError, OSError) as exc:
        print(f"entinav: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
