"""Surveillance patrol through a dense crowd, then export a plot table.

Uses the command-line entry point so the files on disk are exactly what a
user would get from ``entinav surveil``.

    python3 demos/patrol.py [out_dir]
"""
import json
import sys
from pathlib import Path

from entinav.cli import main

here = Path(__file__).parent
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("patrol_out")
scenario = here / "scenarios" / "surveillance_15.yaml"

if main(["surveil", "--scenario", str(scenario), "--out", str(out)]) != 0:
    sys.exit("surveillance run failed")
main(["export-plot-data", "--input", str(out / "trajectories.tsv"), "--out", str(out)])

report = json.loads((out / "report.json").read_text())
print(f"collisions {report['collisions']}, mean planning step {report['mean_step_time_us'] / 1e3:.1f} ms")
print(f"plot table: {out / 'plot_data.csv'}")
