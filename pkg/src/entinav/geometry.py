"""Planar geometry helpers: polygons, segments, containment and clearance."""

import math

import numpy as np

from .errors import InputError


def as_polygon(vertices):
    """Return an ``(n, 2)`` float array, dropping a repeated closing vertex."""
    poly = np.asarray(vertices, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise InputError(f"polygon must be a list of 2-D points, got shape {poly.shape}")
    if len(poly) > 1 and np.array_equal(poly[0], poly[-1]):
        poly = poly[:-1]
    if len(poly) < 3:
        raise InputError("polygon needs at least 3 distinct vertices")
    if not np.all(np.isfinite(poly)):
        raise InputError("polygon vertices must be finite")
    return poly


def signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p):
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def segments_intersect(a, b, c, d):
    """True if closed segments ab and cd share at least one point."""
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if ((o1 > 0 > o2) or (o1 < 0 < o2)) and ((o3 > 0 > o4) or (o3 < 0 < o4)):
        return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


def is_simple(poly):
    """Non-degenerate and free of self-intersections (adjacent edges may share a vertex)."""
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    if n < 3 or abs(signed_area(poly)) < 1e-12:
        return False
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if np.array_equal(a, b):
            return False
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if segments_intersect(a, b, poly[j], poly[(j + 1) % n]):
                return False
    return True


def point_on_boundary(point, poly, tol=1e-12):
    return boundary_distance(point, poly) <= tol


def point_in_polygon(point, poly):
    """Strict containment by ray casting; points on the boundary are outside."""
    x, y = float(point[0]), float(point[1])
    if point_on_boundary((x, y), poly):
        return False
    inside = False
    n = len(poly)
    x1, y1 = poly[n - 1]
    for i in range(n):
        x2, y2 = poly[i]
        if (y1 > y) != (y2 > y):
            xcross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xcross:
                inside = not inside
        x1, y1 = x2, y2
    return inside


def points_in_polygon(points, poly):
    """Vectorised strict containment for an ``(m, 2)`` array of points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    a = poly
    b = np.roll(poly, -1, axis=0)
    for (x1, y1), (x2, y2) in zip(a, b):
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xcross)
    on_edge = boundary_distances(pts, poly) <= 1e-12
    return inside & ~on_edge


def closest_point_on_segment(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return a + t * ab


def point_segment_distance(p, a, b):
    q = closest_point_on_segment(np.asarray(p, float), np.asarray(a, float), np.asarray(b, float))
    return float(math.hypot(p[0] - q[0], p[1] - q[1]))


def boundary_distances(points, poly):
    """Distance from each point to the polygon boundary, shape ``(m,)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    a = poly[None, :, :]
    ab = np.roll(poly, -1, axis=0)[None, :, :] - a
    ap = pts[:, None, :] - a
    denom = np.einsum("ijk,ijk->ij", ab, ab)
    t = np.clip(np.einsum("ijk,ijk->ij", ap, ab) / np.where(denom == 0, 1.0, denom), 0.0, 1.0)
    d = ap - t[..., None] * ab
    return np.sqrt(np.min(np.einsum("ijk,ijk->ij", d, d), axis=1))


def boundary_distance(point, poly):
    return float(boundary_distances(point, poly)[0])


def closest_boundary_point(point, poly):
    """Nearest point on the polygon boundary and the index of its edge."""
    p = np.asarray(point, dtype=float)
    best, best_d, best_i = None, math.inf, -1
    n = len(poly)
    for i in range(n):
        q = closest_point_on_segment(p, poly[i], poly[(i + 1) % n])
        d = float(np.hypot(*(p - q)))
        if d < best_d:
            best, best_d, best_i = q, d, i
    return best, best_i


def polygon_clearance(point, poly):
    """Signed clearance: boundary distance outside, negative inside."""
    d = boundary_distance(point, poly)
    return -d if point_in_polygon(point, poly) else d


def segment_segment_distance(a, b, c, d):
    if segments_intersect(a, b, c, d):
        return 0.0
    return min(point_segment_distance(a, c, d), point_segment_distance(b, c, d),
               point_segment_distance(c, a, b), point_segment_distance(d, a, b))


def segment_polygon_clearance(a, b, poly):
    """Smallest distance between segment ab and the closed polygon region."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if point_in_polygon(a, poly) or point_in_polygon(b, poly):
        return 0.0
    n = len(poly)
    return min(segment_segment_distance(a, b, poly[i], poly[(i + 1) % n]) for i in range(n))


def segment_crossing(p0, p1, poly):
    """First point where the segment p0->p1 meets the polygon boundary, or None."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    r = p1 - p0
    best_t = math.inf
    n = len(poly)
    for i in range(n):
        q0 = poly[i]
        s = poly[(i + 1) % n] - q0
        denom = r[0] * s[1] - r[1] * s[0]
        if denom == 0.0:
            continue
        qp = q0 - p0
        t = (qp[0] * s[1] - qp[1] * s[0]) / denom
        u = (qp[0] * r[1] - qp[1] * r[0]) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            best_t = min(best_t, t)
    if best_t is math.inf:
        return None
    return p0 + best_t * r
