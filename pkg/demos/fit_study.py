"""Fit the emotion mapping from a perception-study response file.

The bundled synthetic study was generated from the reference matrix, so the
fit should come back exact up to float rounding.

    python3 demos/fit_study.py [responses.csv]
"""
import sys
from pathlib import Path

import numpy as np

from entinav import edm

path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent.parent / "tests/data/synthetic_responses.csv"
responses = edm.parse_responses(path.read_text(), allow_fractional=True)
points = edm.aggregate_responses(responses)
fitted = edm.fit_mapping(points)

print(f"{len(responses)} responses, {len(points)} aggregated design points")
print(edm.format_matrix(fitted.matrix), end="")
print(f"max deviation from reference: {np.abs(fitted.matrix - edm.REFERENCE_MATRIX).max():.2e}")
print(f"determinant: {np.linalg.det(fitted.matrix):.4f}")

stats = edm.study_statistics(responses)
print(f"cronbach alpha: {stats.cronbach_alpha:.3f}")
print("explained variance:", np.round(stats.explained_variance, 3))
