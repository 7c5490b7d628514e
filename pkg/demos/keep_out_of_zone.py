"""Three robots keep a crowd out of a restricted square.

Runs the intervention arm and the socially unaware baseline on the same seed
and compares how many pedestrians entered the zone, then sweeps the
invisibility floor: a higher floor keeps the team quieter and less effective.

    python3 demos/keep_out_of_zone.py
"""
from entinav.scenarios import canonical_intervention_scenario, run_intervention

print(" s_min  baseline  ours  avoided  overhead  collisions")
for s_min in (0.0, 0.3, 1.0):
    ours, base = run_intervention(canonical_intervention_scenario(s_min=s_min))
    pct = f"{ours.additional_time_pct:7.1f}%" if ours.additional_time_pct is not None else "     n/a"
    print(f"{s_min:6.1f}  {base.intrusions:8d}  {ours.intrusions:4d}  {ours.intrusions_avoided:7d}  {pct}  "
          f"{ours.collisions + base.collisions:10d}")
