import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from entinav import edm
from entinav.cli import Config, format_scenario, main, parse_scenario
from entinav.core import GroupParams, MotionParams
from entinav.errors import ParseError, ValidationError
from entinav.scenarios import (Mode, canonical_intervention_scenario, circle_scenario,
                               mid_density_surveillance_scenario)
from entinav.sim import format_trajectories, parse_trajectories, simulate

MINIMAL = """\
world:
  bounds: [-10, -10, 10, 10]
pedestrians:
  - start: [-5, 0]
    goal: [5, 0]
"""

SMALL_SURVEILLANCE = """\
world:
  bounds: [-12, -12, 12, 12]
pedestrians:
  - {start: [-6, 1], goal: [6, 1]}
  - {start: [6, -1], goal: [-6, -1]}
  - {start: [0, -6], goal: [0, 6]}
robots:
  starts: [[-8, -4], [-8, -3]]
  goals: [[8, -4], [8, -3]]
mode: surveillance
duration: 6
"""


def run_cli(*args):
    return main([str(a) for a in args])


# --------------------------------------------------------------- scenario parsing

def test_minimal_scenario_defaults():
    scn = parse_scenario(MINIMAL)
    assert scn.world.bounds == (-10, -10, 10, 10)
    assert scn.pedestrians[0].params == MotionParams()
    assert scn.dt == 0.1 and scn.duration == 30.0 and scn.seed == 0
    assert scn.mode is Mode.BASELINE
    assert scn.robots.size == 0 and scn.zones == ()
    assert scn.invisibility == edm.InvisibilitySetting()


def test_robot_pref_speed_bound_names_field_and_line():
    text = SMALL_SURVEILLANCE + "# trailing comment\n"
    text = text.replace("  goals: [[8, -4], [8, -3]]\n", "  goals: [[8, -4], [8, -3]]\n  params:\n    pref_speed: 3.0\n")
    with pytest.raises(ValidationError) as info:
        parse_scenario(text)
    assert info.value.path == "robots.params.pref_speed"
    assert info.value.line == 11
    assert "2.2" in str(info.value)


def test_goal_inside_obstacle():
    text = MINIMAL + "obstacles:\n  - [[4, -1], [6, -1], [6, 1], [4, 1]]\n"
    with pytest.raises(ValidationError) as info:
        parse_scenario(text)
    assert info.value.path == "pedestrians[0].goal"
    assert info.value.line == 5


def test_syntax_error_has_location():
    with pytest.raises(ParseError) as info:
        parse_scenario("world:\n  bounds: [1, 2\npedestrians: []\n")
    assert info.value.line is not None and info.value.line >= 2


@pytest.mark.parametrize("text, path", [
    ("wrold: {}\n", "wrold"),
    ("world:\n  bounds: [0, 0, 1]\n", "world.bounds"),
    ("mode: patrol\n", "mode"),
    ("dt: -0.1\n", "dt"),
    ("invisibility: {s_min: 1.5}\n", "invisibility.s_min"),
    ("pedestrians:\n  - start: [0, 0]\n    goal: [1, 1]\n    params: {radius: -1}\n", "pedestrians[0].params.radius"),
    ("robots:\n  starts: [[0, 0]]\n  goals: [[1, 1]]\n  size: 3\n", "robots.size"),
])
def test_validation_paths(text, path):
    with pytest.raises(ValidationError) as info:
        parse_scenario(text)
    assert info.value.path == path


@pytest.mark.parametrize("scn", [circle_scenario(), canonical_intervention_scenario(),
                                 mid_density_surveillance_scenario()])
def test_scenario_text_roundtrip(scn):
    text = format_scenario(scn)
    again = parse_scenario(text)
    assert format_scenario(again) == text
    assert again.mode is scn.mode
    assert again.robots.params == scn.robots.params


def test_shipped_scenarios_roundtrip():
    demos = Path(__file__).resolve().parent.parent / "demos" / "scenarios"
    files = sorted(demos.glob("*.yaml"))
    assert files
    for f in files:
        text = f.read_text()
        assert format_scenario(parse_scenario(text)) == text


def test_config_validation_and_overrides():
    with pytest.raises(ValidationError):
        Config(s_min=1.5)
    with pytest.raises(ValidationError):
        Config(dt=0.0)
    scn = parse_scenario(MINIMAL)
    cfg = Config(seed=7, s_min=0.4, dt=0.05)
    out = cfg.apply(scn)
    assert out.seed == 7 and out.dt == 0.05
    assert out.invisibility.mode is edm.InvisibilityMode.LOWER_BOUND and out.invisibility.s_min == 0.4


# --------------------------------------------------------------- exit codes

def test_exit_codes(tmp_path, capsys):
    scn = tmp_path / "s.yaml"
    scn.write_text(SMALL_SURVEILLANCE)
    assert run_cli("surveil", "--scenario", scn, "--out", tmp_path / "ok", "--no-timing") == 0
    # usage problems
    assert run_cli("teleport") == 1
    assert run_cli("simulate", "--bogus") == 1
    assert run_cli("simulate", "--scenario", tmp_path / "missing.yaml") == 1
    assert run_cli("simulate") == 1
    # validation problems
    bad = tmp_path / "bad.yaml"
    bad.write_text("world: {bounds: [0, 0, 1]}\n")
    assert run_cli("simulate", "--scenario", bad) == 1
    assert run_cli("simulate", "--scenario", scn, "--s-min", "2") == 1
    err = capsys.readouterr().err
    assert "world.bounds" in err and "--s-min" in err
    # runtime problem: the output directory cannot be created
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run_cli("simulate", "--scenario", scn, "--out", blocker / "sub") == 2


def test_surveil_outputs_reingest(tmp_path):
    scn = tmp_path / "s.yaml"
    scn.write_text(SMALL_SURVEILLANCE)
    out = tmp_path / "out"
    assert run_cli("surveil", "--scenario", scn, "--out", out) == 0
    trajs = parse_trajectories((out / "trajectories.tsv").read_text())
    assert len(trajs) == 5 and all(len(t.samples) == 61 for t in trajs.values())
    report = json.loads((out / "report.json").read_text())
    assert report["collisions"] == 0
    assert report["mean_step_time_us"] > 0
    assert run_cli("export-plot-data", "--input", out / "trajectories.tsv", "--out", out) == 0
    rows = list(csv.reader(io.StringIO((out / "plot_data.csv").read_text())))
    assert rows[0] == ["frame"] + [f"{a}_{i}" for i in range(5) for a in ("x", "y")]
    assert len(rows) == 62
    assert float(rows[-1][1]) == pytest.approx(trajs[0].positions[-1][0], abs=1e-9)


def test_simulate_same_seed_is_byte_identical(tmp_path):
    scn = tmp_path / "s.yaml"
    scn.write_text(SMALL_SURVEILLANCE)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run_cli("simulate", "--scenario", scn, "--seed", 7, "--out", out, "--no-timing") == 0
        outs.append(out)
    for name in ("trajectories.tsv", "report.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


# --------------------------------------------------------------- study data and prediction

def test_fit_edm_recovers_reference(tmp_path, data_dir, capsys):
    responses = data_dir / "synthetic_responses.csv"
    assert run_cli("fit-edm", "--input", responses, "--out", tmp_path) == 1  # ratings are fractional
    assert run_cli("fit-edm", "--input", responses, "--out", tmp_path, "--allow-fractional") == 0
    m = edm.parse_matrix((tmp_path / "mapping.txt").read_text())
    assert np.abs(m - edm.REFERENCE_MATRIX).max() <= 1e-6
    # the fitted file is usable as a mapping override
    scn = tmp_path / "s.yaml"
    scn.write_text(SMALL_SURVEILLANCE)
    assert run_cli("surveil", "--scenario", scn, "--mapping", tmp_path / "mapping.txt", "--out", tmp_path) == 0


def test_fit_edm_incomplete_and_singular(tmp_path):
    rs = [edm.StudyResponse(1, i, p, lvl, (0, 0, 0, 0)) for i, (p, lvl) in enumerate(edm.STUDY_PAIRS, start=1)]
    partial = tmp_path / "partial.csv"
    partial.write_text(edm.format_responses(rs[:6]))
    assert run_cli("fit-edm", "--input", partial, "--out", tmp_path) == 1
    zeros = tmp_path / "zeros.csv"
    zeros.write_text(edm.format_responses(rs))
    assert run_cli("fit-edm", "--input", zeros, "--out", tmp_path) == 0
    singular = tmp_path / "mapping.txt"
    scn = tmp_path / "s.yaml"
    scn.write_text(SMALL_SURVEILLANCE)
    assert run_cli("surveil", "--scenario", scn, "--mapping", singular, "--out", tmp_path / "x") == 1


def test_study_stats(tmp_path):
    rng = np.random.default_rng(0)
    rs = []
    for pid in range(1, 13):
        for i, (p, lvl) in enumerate(edm.STUDY_PAIRS, start=1):
            rs.append(edm.StudyResponse(pid, i, p, lvl, tuple(int(x) for x in rng.integers(-2, 3, 4))))
    f = tmp_path / "r.csv"
    f.write_text(edm.format_responses(rs))
    assert run_cli("study-stats", "--input", f, "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "study_stats.json").read_text())
    ref = edm.study_statistics(rs)
    assert np.array(doc["correlation"]) == pytest.approx(ref.correlation, abs=1e-12)
    assert doc["cronbach_alpha"] == pytest.approx(ref.cronbach_alpha, abs=1e-12)
    assert sum(doc["explained_variance"]) == pytest.approx(1.0)


def test_predict_command(tmp_path):
    res = simulate(circle_scenario(n=4, duration=2.0))
    f = tmp_path / "obs.tsv"
    f.write_text(format_trajectories(res.trajectories.values()))
    assert run_cli("predict", "--input", f, "--out", tmp_path, "--horizon", 2.0) == 0
    pred = parse_trajectories((tmp_path / "predictions.tsv").read_text())
    assert sorted(pred) == [0, 1, 2, 3]
    assert pred[0].frames[0] == 21 and len(pred[0].samples) == 20
    fitted = json.loads((tmp_path / "fitted_params.json").read_text())
    assert set(fitted) == {"0", "1", "2", "3"}
    for p in fitted.values():
        GroupParams(**p)  # within bounds
        assert p["pref_speed"] == pytest.approx(1.5, rel=0.1)


def test_bench(tmp_path):
    assert run_cli("bench", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "bench.json").read_text())
    assert set(doc) >= {"entitativity_us", "planning_step_3_robots_us"}
    assert all(v > 0 for v in doc.values())


@pytest.mark.slow
def test_intervene_canonical(tmp_path, data_dir, capsys):
    out = tmp_path / "run"
    assert run_cli("intervene", "--scenario", data_dir / "canonical_intervention.yaml", "--out", out,
                   "--no-timing") == 0
    report = json.loads((out / "report.json").read_text())
    assert report["intrusions_avoided"] >= 2
    assert report["collisions"] == 0
    assert json.loads(capsys.readouterr().out) == report
    parse_trajectories((out / "baseline_trajectories.tsv").read_text())
