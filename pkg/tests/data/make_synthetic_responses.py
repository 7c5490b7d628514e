"""Regenerate synthetic_responses.csv: exact ratings a known 4x4 map would produce.

Written without the library so the file can serve as an independent fixture.
"""

import csv
import sys

import numpy as np

MATRIX = np.array([
    [-1.7862, -1.0614, -2.1983, -1.7122],
    [1.1224, 1.1441, 1.7672, -0.2634],
    [-1.0500, -1.2176, -2.1466, -0.9220],
    [1.1948, 1.7000, 0.9224, 0.3622],
])
# name, min, max, default, normalisation offset, scale
PARAMS = [
    ("neighbor_dist", 3.0, 10.0, 5.0, 5.0, 14.0),
    ("radius", 0.3, 2.0, 0.7, 0.7, 3.4),
    ("pref_speed", 1.2, 2.2, 1.5, 1.5, 2.0),
    ("group_cohesion", 0.1, 1.0, 0.5, 0.5, 1.8),
]


def rows(participants=3):
    pair = 0
    for k, (name, lo, hi, _, off, scale) in enumerate(PARAMS):
        for level, value in (("min", lo), ("max", hi)):
            pair += 1
            n = np.zeros(4)
            n[k] = (value - off) / scale
            e = MATRIX @ n
            for pid in range(1, participants + 1):
                yield [pid, pair, name, level, *(repr(float(x)) for x in e)]


if __name__ == "__main__":
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["participant_id", "pair_id", "varied_param", "level",
                "friendliness", "creepiness", "comfort", "unnerving"])
    w.writerows(rows())
