"""Entitativity mapping between group motion parameters and perceived emotion features.

The mapping is linear in normalised parameters::

    E = M @ n,   n = (gp - defaults) / scales

with ``E = (friendliness, creepiness, comfort, unnerving)``. Social invisibility of a
group is ``s = 1 - |E - e_min| / |e_max - e_min|`` where ``e_min``/``e_max`` are the
mapping evaluated at the all-minimum and all-maximum parameter corners.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .core import GP_BOUNDS, GP_FIELDS, GroupParams
from .errors import (BoundViolation, ConfigurationError, FitError, IncompleteDataError,
                     InputError, ParseError, StatisticsError)

E_FIELDS = ("friendliness", "creepiness", "comfort", "unnerving")

# Divisors are twice each parameter's allowed range, offsets are the defaults.
NORMALIZATION_OFFSET = np.array([5.0, 0.7, 1.5, 0.5])
NORMALIZATION_SCALE = np.array([14.0, 3.4, 2.0, 1.8])

# Fitted from the 100-participant perception study; rows follow E_FIELDS,
# columns follow GP_FIELDS.
REFERENCE_MATRIX = np.array([
    [-1.7862, -1.0614, -2.1983, -1.7122],
    [1.1224, 1.1441, 1.7672, -0.2634],
    [-1.0500, -1.2176, -2.1466, -0.9220],
    [1.1948, 1.7000, 0.9224, 0.3622],
])
REFERENCE_MATRIX.setflags(write=False)

# creepiness + unnerving - friendliness - comfort
THREAT_DIRECTION = np.array([-1.0, 1.0, -1.0, 1.0])

DET_TOL = 1e-9


class EntitativityVector(NamedTuple):
    friendliness: float
    creepiness: float
    comfort: float
    unnerving: float

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))


def _earray(e):
    arr = np.asarray(e, dtype=float)
    if arr.shape != (4,) or not np.all(np.isfinite(arr)):
        raise InputError(f"entitativity vector must be 4 finite values, got {e!r}")
    return arr


def normalize_gp(gp) -> np.ndarray:
    """Centre on the defaults and divide by the fixed scales."""
    if not isinstance(gp, GroupParams):
        gp = GroupParams.from_array(gp)
    return (gp.as_array() - NORMALIZATION_OFFSET) / NORMALIZATION_SCALE


def denormalize_gp(n, clamp=True) -> GroupParams:
    raw = np.asarray(n, dtype=float) * NORMALIZATION_SCALE + NORMALIZATION_OFFSET
    return GroupParams.from_array(raw, clamp=clamp)


N_MIN = normalize_gp(GroupParams.minima())
N_MAX = normalize_gp(GroupParams.maxima())


@dataclass(frozen=True)
class EntitativityMapping:
    """Linear map from normalised group parameters to entitativity features.

    Construction rejects a singular matrix unless ``require_invertible=False``, in
    which case ``invertible`` records the outcome and inverse queries raise.
    """

    matrix: np.ndarray = field(default_factory=lambda: REFERENCE_MATRIX.copy())
    bounds: dict = field(default_factory=lambda: dict(GP_BOUNDS))
    require_invertible: bool = True
    e_min: EntitativityVector = field(init=False)
    e_max: EntitativityVector = field(init=False)
    invertible: bool = field(init=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise ConfigurationError(f"mapping matrix must be a finite 4x4 array, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        invertible = abs(np.linalg.det(m)) > DET_TOL
        if self.require_invertible and not invertible:
            raise ConfigurationError(f"mapping matrix is singular (|det| <= {DET_TOL})")
        object.__setattr__(self, "invertible", invertible)
        object.__setattr__(self, "e_min", EntitativityVector.from_array(m @ N_MIN))
        object.__setattr__(self, "e_max", EntitativityVector.from_array(m @ N_MAX))

    @classmethod
    def reference(cls):
        return cls(REFERENCE_MATRIX.copy())

    @property
    def threat_coefficients(self):
        """Per-parameter sensitivity of the threat direction; all positive for the reference fit."""
        return THREAT_DIRECTION @ self.matrix

    @property
    def span(self):
        return float(np.linalg.norm(np.subtract(self.e_max, self.e_min)))


def entitativity(mapping: EntitativityMapping, gp) -> EntitativityVector:
    return EntitativityVector.from_array(mapping.matrix @ normalize_gp(gp))


def extreme_entitativity(mapping: EntitativityMapping):
    """``(e_min, e_max)``: the mapping at the all-min and all-max parameter corners."""
    return mapping.e_min, mapping.e_max


def _span(mapping):
    span = mapping.span
    if span == 0.0:
        raise ConfigurationError("degenerate mapping: e_max equals e_min")
    return span


def invisibility(mapping: EntitativityMapping, e) -> float:
    """Social invisibility in [0, 1]; 1 at ``e_min``, 0 at ``e_max``. Off-segment values are clamped."""
    span = _span(mapping)
    dist = float(np.linalg.norm(_earray(e) - np.asarray(mapping.e_min)))
    return min(1.0, max(0.0, 1.0 - dist / span))


def _check_unit(name, s):
    if not (isinstance(s, (int, float, np.floating)) and 0.0 <= s <= 1.0):
        raise InputError(f"{name} must lie in [0, 1], got {s!r}")


class InvisibilityMode(str, Enum):
    FIXED_S = "fixed_s"
    LOWER_BOUND = "lower_bound"


@dataclass(frozen=True)
class InvisibilitySetting:
    """Either a fixed invisibility ``s`` or a floor ``s_min`` (1 = least noticeable)."""

    mode: InvisibilityMode = InvisibilityMode.FIXED_S
    s: float = 1.0
    s_min: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", InvisibilityMode(self.mode))
        _check_unit("s", self.s)
        _check_unit("s_min", self.s_min)


def target_entitativity(mapping: EntitativityMapping, s: float) -> EntitativityVector:
    """Point on the e_min -> e_max segment whose invisibility is exactly ``s``."""
    _check_unit("s", s)
    _span(mapping)
    e_min = np.asarray(mapping.e_min)
    e_max = np.asarray(mapping.e_max)
    return EntitativityVector.from_array(e_min + (1.0 - s) * (e_max - e_min))


def params_for_entitativity(mapping: EntitativityMapping, e_des) -> GroupParams:
    """Invert the mapping, denormalise, and clamp into the parameter bounds."""
    if not mapping.invertible:
        raise ConfigurationError("mapping matrix is singular; cannot invert")
    n = np.linalg.solve(mapping.matrix, _earray(e_des))
    return denormalize_gp(n, clamp=True)


def constrain_invisibility(mapping: EntitativityMapping, e, s_min: float) -> EntitativityVector:
    """Pull ``e`` toward ``e_min`` just far enough that its invisibility reaches ``s_min``."""
    _check_unit("s_min", s_min)
    e = _earray(e)
    if invisibility(mapping, e) >= s_min:
        return EntitativityVector.from_array(e)
    e_min = np.asarray(mapping.e_min)
    dist = float(np.linalg.norm(e - e_min))
    t = 1.0 - (1.0 - s_min) * mapping.span / dist
    return EntitativityVector.from_array(e + t * (e_min - e))


# --------------------------------------------------------------------------- study data

class Level(str, Enum):
    MIN = "min"
    MAX = "max"


# pair ids 1..8: each parameter at its min then its max
STUDY_PAIRS = tuple((p, lvl) for p in GP_FIELDS for lvl in (Level.MIN, Level.MAX))
RESPONSE_HEADER = ("participant_id", "pair_id", "varied_param", "level") + E_FIELDS
RATING_RANGE = (-2, 2)


def pair_id_for(varied_param, level) -> int:
    return STUDY_PAIRS.index((varied_param, Level(level))) + 1


def design_vector(varied_param, level) -> np.ndarray:
    """Normalised parameters of the non-default video in a study pair."""
    low, high, default = GP_BOUNDS[varied_param]
    gp = dict((f, GP_BOUNDS[f][2]) for f in GP_FIELDS)
    gp[varied_param] = low if Level(level) is Level.MIN else high
    return normalize_gp(GroupParams(**gp))


@dataclass(frozen=True)
class StudyResponse:
    participant_id: int
    pair_id: int
    varied_param: str
    level: Level
    ratings: tuple

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        if self.varied_param not in GP_FIELDS:
            raise InputError(f"unknown varied_param {self.varied_param!r}")
        if not 1 <= self.pair_id <= len(STUDY_PAIRS):
            raise InputError(f"pair_id must be in 1..8, got {self.pair_id}")
        expected = pair_id_for(self.varied_param, self.level)
        if expected != self.pair_id:
            raise InputError(f"pair_id {self.pair_id} inconsistent with "
                             f"({self.varied_param}, {self.level.value}); expected {expected}")
        ratings = tuple(self.ratings)
        if len(ratings) != 4:
            raise InputError("exactly four ratings required")
        lo, hi = RATING_RANGE
        for name, r in zip(E_FIELDS, ratings):
            if not (math.isfinite(r) and lo <= r <= hi):
                raise BoundViolation(name, r, lo, hi)
        object.__setattr__(self, "ratings", ratings)


def parse_responses(text: str, allow_fractional=False) -> list:
    """Parse comma-separated study responses.

    Ratings must be integers unless ``allow_fractional`` is set, which admits
    pre-averaged or model-generated values within the same range.
    """
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise ParseError("empty response file", line=1)
    header = tuple(c.strip() for c in rows[0])
    if header != RESPONSE_HEADER:
        raise ParseError(f"expected header {','.join(RESPONSE_HEADER)}", line=1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(RESPONSE_HEADER):
            raise ParseError(f"expected {len(RESPONSE_HEADER)} fields, got {len(row)}", line=lineno)
        try:
            pid, pair = int(row[0]), int(row[1])
            if allow_fractional:
                ratings = tuple(float(c) for c in row[4:])
            else:
                ratings = tuple(int(c) for c in row[4:])
            out.append(StudyResponse(pid, pair, row[2].strip(), row[3].strip(), ratings))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return out


def format_responses(responses) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESPONSE_HEADER)
    for r in responses:
        w.writerow([r.participant_id, r.pair_id, r.varied_param, r.level.value, *(_fmt_rating(x) for x in r.ratings)])
    return buf.getvalue()


def _fmt_rating(x):
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


class StudyPoint(NamedTuple):
    pair_id: int
    varied_param: str
    level: Level
    e: EntitativityVector


def aggregate_responses(responses) -> list:
    """Per-pair mean ratings, ordered by pair id."""
    sums = {}
    counts = {}
    for r in responses:
        sums[r.pair_id] = sums.get(r.pair_id, 0.0) + np.asarray(r.ratings, dtype=float)
        counts[r.pair_id] = counts.get(r.pair_id, 0) + 1
    missing = [i for i in range(1, len(STUDY_PAIRS) + 1) if i not in counts]
    if missing:
        raise IncompleteDataError(missing)
    points = []
    for pid, (param, level) in enumerate(STUDY_PAIRS, start=1):
        points.append(StudyPoint(pid, param, level, EntitativityVector.from_array(sums[pid] / counts[pid])))
    return points


def fit_mapping(points, bounds=None) -> EntitativityMapping:
    """Least-squares matrix without intercept, one regression per entitativity feature.

    The returned mapping may be singular; check ``invertible`` before inverting.
    """
    if bounds is not None and dict(bounds) != dict(GP_BOUNDS):
        raise FitError("only the standard parameter bounds are supported by the normalisation")
    design = np.array([design_vector(p.varied_param, p.level) for p in points])
    targets = np.array([np.asarray(p.e, dtype=float) for p in points])
    if design.ndim != 2 or np.linalg.matrix_rank(design) < 4:
        raise FitError("design matrix is rank deficient; every parameter must be varied")
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return EntitativityMapping(coef.T, require_invertible=False)


def synthetic_points(matrix=REFERENCE_MATRIX):
    """Exact study points a given matrix would produce under the one-at-a-time design."""
    m = np.asarray(matrix, dtype=float)
    return [StudyPoint(i, p, lvl, EntitativityVector.from_array(m @ design_vector(p, lvl)))
            for i, (p, lvl) in enumerate(STUDY_PAIRS, start=1)]


@dataclass(frozen=True)
class StudyStatistics:
    correlation: np.ndarray
    cronbach_alpha: float
    explained_variance: np.ndarray


def cronbach_alpha(items) -> float:
    """Cronbach's alpha for an ``(n_respondents, k_items)`` array."""
    items = np.asarray(items, dtype=float)
    k = items.shape[1]
    item_var = items.var(axis=0, ddof=1).sum()
    total_var = items.sum(axis=1).var(ddof=1)
    if total_var == 0:
        raise StatisticsError("total score has zero variance")
    return float(k / (k - 1) * (1.0 - item_var / total_var))


def study_statistics(responses, reverse_items=("creepiness", "unnerving")) -> StudyStatistics:
    """Item correlations, reliability and principal-component variance shares.

    ``reverse_items`` are negated before alpha is computed so that every item
    points the same way; correlations and PCA use the raw ratings.
    """
    data = np.array([r.ratings for r in responses], dtype=float).reshape(-1, 4)
    if len(data) < 2:
        raise StatisticsError("need at least two responses")
    sd = data.std(axis=0, ddof=1)
    for name, s in zip(E_FIELDS, sd):
        if s == 0:
            raise StatisticsError(f"item {name!r} has zero variance")
    corr = np.corrcoef(data, rowvar=False)
    signs = np.array([-1.0 if f in reverse_items else 1.0 for f in E_FIELDS])
    alpha = cronbach_alpha(data * signs)
    eig = np.sort(np.linalg.eigvalsh(corr))[::-1]
    eig = np.clip(eig, 0.0, None)
    return StudyStatistics(corr, alpha, eig / eig.sum())


# --------------------------------------------------------------------------- matrix text

def format_matrix(matrix) -> str:
    """Row-major, whitespace-separated decimal text, one row per line."""
    m = np.asarray(matrix, dtype=float)
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in m)


def parse_matrix(text: str, shape=(4, 4)) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.replace(",", " ").split()])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if len(rows[-1]) != shape[1]:
            raise ParseError(f"expected {shape[1]} values, got {len(rows[-1])}", line=lineno)
    if len(rows) != shape[0]:
        raise ParseError(f"expected {shape[0]} rows, got {len(rows)}")
    return np.array(rows)
