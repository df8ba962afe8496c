"""Planar primitives: isometries, lines, orientation and intersection predicates.

Points are plain ``(2,)`` float arrays (or anything ``np.asarray`` accepts);
polygons are ``(k, 2)`` arrays in counter-clockwise order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

EPS = 1e-9
ORTHO_TOL = 1e-12


def as_point(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"non-finite point {p}")
    return p


@dataclass(frozen=True)
class Line2:
    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = as_point(self.direction)
        norm = np.hypot(*d)
        if norm == 0.0:
            raise ValueError("line direction must be non-zero")
        object.__setattr__(self, "point", as_point(self.point))
        object.__setattr__(self, "direction", d / norm)

    @classmethod
    def through(cls, a, b) -> "Line2":
        a, b = as_point(a), as_point(b)
        return cls(a, b - a)

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.direction[1], self.direction[0]])

    def distance(self, p) -> float:
        return abs(float(self.normal @ (as_point(p) - self.point)))

    def project(self, p) -> np.ndarray:
        p = as_point(p)
        return self.point + self.direction * float(self.direction @ (p - self.point))

    def same_as(self, other: "Line2", tol: float = 1e-9) -> bool:
        parallel = abs(self.direction[0] * other.direction[1] - self.direction[1] * other.direction[0]) < tol
        return parallel and self.distance(other.point) < tol


@dataclass(frozen=True, eq=False)
class Isometry2:
    """``p -> linear @ p + translation`` with an explicit orientation flag."""

    linear: np.ndarray
    translation: np.ndarray
    orientation: int

    def __post_init__(self):
        m = np.asarray(self.linear, dtype=float).reshape(2, 2)
        if not np.allclose(m.T @ m, np.eye(2), atol=ORTHO_TOL * 10):
            raise ValueError(f"linear part is not orthogonal:\n{m}")
        det = np.linalg.det(m)
        if self.orientation not in (1, -1) or abs(det - self.orientation) > 1e-9:
            raise ValueError(f"orientation flag {self.orientation} does not match det {det:.3g}")
        object.__setattr__(self, "linear", m)
        object.__setattr__(self, "translation", as_point(self.translation))

    def __call__(self, p) -> np.ndarray:
        return apply(self, p)

    def __matmul__(self, other: "Isometry2") -> "Isometry2":
        return compose(self, other)

    def __repr__(self):
        m, t = self.linear, self.translation
        return (f"Isometry2([[{m[0, 0]:.6g}, {m[0, 1]:.6g}], [{m[1, 0]:.6g}, {m[1, 1]:.6g}]], "
                f"t=({t[0]:.6g}, {t[1]:.6g}), o={self.orientation:+d})")

    @property
    def angle(self) -> float:
        """Rotation angle of the linear part (only meaningful for orientation +1)."""
        return float(np.arctan2(self.linear[1, 0], self.linear[0, 0]))

    def is_identity(self, tol: float = 1e-10) -> bool:
        return isclose(self, IDENTITY, tol)

    def key(self, digits: int = 9) -> tuple:
        """Hashable rounded form, for deduplication."""
        vals = np.concatenate([self.linear.ravel(), self.translation])
        vals = np.round(vals, digits) + 0.0  # folds -0.0
        return tuple(vals.tolist())


IDENTITY = Isometry2(np.eye(2), np.zeros(2), 1)


def translation(dx: float, dy: float) -> Isometry2:
    return Isometry2(np.eye(2), (dx, dy), 1)


def rotation(angle: float, center=(0.0, 0.0)) -> Isometry2:
    c, s = np.cos(angle), np.sin(angle)
    # snap so quarter turns are exact
    c, s = (round(c) if abs(c - round(c)) < 1e-15 else c), (round(s) if abs(s - round(s)) < 1e-15 else s)
    m = np.array([[c, -s], [s, c]], dtype=float)
    center = as_point(center)
    return Isometry2(m, center - m @ center, 1)


def reflection(line: Line2) -> Isometry2:
    d = line.direction
    m = 2.0 * np.outer(d, d) - np.eye(2)
    return Isometry2(m, line.point - m @ line.point, -1)


def glide(line: Line2, distance: float) -> Isometry2:
    """Reflection across ``line`` followed by a translation along it."""
    r = reflection(line)
    return Isometry2(r.linear, r.translation + distance * line.direction, -1)


def compose(a: Isometry2, b: Isometry2) -> Isometry2:
    """``compose(a, b)(p) == a(b(p))``."""
    return Isometry2(a.linear @ b.linear, a.linear @ b.translation + a.translation,
                     a.orientation * b.orientation)


def apply(g: Isometry2, p) -> np.ndarray:
    """Apply ``g`` to a point or to an ``(k, 2)`` array of points."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return g.linear @ p + g.translation
    return p @ g.linear.T + g.translation


def inverse(g: Isometry2) -> Isometry2:
    mt = g.linear.T
    return Isometry2(mt, -mt @ g.translation, g.orientation)


def isclose(a: Isometry2, b: Isometry2, tol: float = 1e-10) -> bool:
    return (a.orientation == b.orientation
            and np.max(np.abs(a.linear - b.linear)) <= tol
            and np.max(np.abs(a.translation - b.translation)) <= tol)


class FixedSet(NamedTuple):
    """kind is one of ``"all"`` (identity), ``"none"``, ``"point"``, ``"line"``."""

    kind: str
    point: Optional[np.ndarray] = None
    line: Optional[Line2] = None


def fixed_set(g: Isometry2, tol: float = 1e-10) -> FixedSet:
    if g.orientation == 1:
        if np.allclose(g.linear, np.eye(2), atol=tol):
            if np.max(np.abs(g.translation)) <= tol:
                return FixedSet("all")
            return FixedSet("none")
        # (I - M) p = t has a unique solution for a proper rotation
        p = np.linalg.solve(np.eye(2) - g.linear, g.translation)
        return FixedSet("point", point=p)
    # reflection or glide: eigenvector of M for eigenvalue +1 is the axis direction
    m = g.linear
    d = np.array([1.0 + m[0, 0], m[1, 0]])
    if np.hypot(*d) < 1e-6:
        d = np.array([m[0, 1], 1.0 + m[1, 1]])
    d /= np.hypot(*d)
    along = float(d @ g.translation)
    if abs(along) > tol:
        return FixedSet("none")
    # reflection: the midpoint of p and g(p) lies on the mirror for any p
    return FixedSet("line", line=Line2(0.5 * g.translation, d))


def cross(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def signed_area(a, b, c) -> float:
    """Half the cross product ``(b - a) x (c - a)``; positive for CCW."""
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def polygon_area(poly) -> float:
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(a, b, c, eps=EPS) -> int:
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if v > eps:
        return 1
    if v < -eps:
        return -1
    return 0


def _on_segment(p, a, b, eps=EPS) -> bool:
    """``p`` collinear with ``ab`` and within its bounding box."""
    return (min(a[0], b[0]) - eps <= p[0] <= max(a[0], b[0]) + eps
            and min(a[1], b[1]) - eps <= p[1] <= max(a[1], b[1]) + eps)


def segments_properly_intersect(s1, s2, eps: float = EPS) -> bool:
    """True if the segments cross, overlap, or an endpoint touches the other's interior.

    Touching at a shared endpoint only does not count.
    """
    a, b = (as_point(p) for p in s1)
    c, d = (as_point(p) for p in s2)
    if np.hypot(*(b - a)) <= eps or np.hypot(*(d - c)) <= eps:
        raise ValueError("degenerate (zero-length) segment")
    o1, o2, o3, o4 = _orient(a, b, c, eps), _orient(a, b, d, eps), _orient(c, d, a, eps), _orient(c, d, b, eps)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    shared = [p for p in (a, b) for q in (c, d) if np.hypot(*(p - q)) <= eps]
    if o1 == 0 and o2 == 0:
        # collinear: overlap of positive length, or touching only at a shared endpoint
        u = (b - a) / np.hypot(*(b - a))
        t = sorted([0.0, float(u @ (b - a))])
        s = sorted([float(u @ (c - a)), float(u @ (d - a))])
        overlap = min(t[1], s[1]) - max(t[0], s[0])
        if overlap > eps:
            return True
        if overlap < -eps:
            return False
        return not shared
    # one endpoint touching the other segment
    for o, p, q0, q1 in ((o1, c, a, b), (o2, d, a, b), (o3, a, c, d), (o4, b, c, d)):
        if o == 0 and _on_segment(p, q0, q1, eps):
            if not any(np.hypot(*(p - s)) <= eps for s in shared):
                return True
    return False


def polygon_is_simple(poly) -> bool:
    poly = np.asarray(poly, dtype=float)
    k = len(poly)
    if k < 3:
        return False
    edges = [(poly[i], poly[(i + 1) % k]) for i in range(k)]
    if any(np.hypot(*(e[1] - e[0])) <= EPS for e in edges):
        return False
    # broad phase: sort by min x, compare only overlapping x-ranges
    xmin = np.minimum(poly[:, 0], np.roll(poly[:, 0], -1))
    xmax = np.maximum(poly[:, 0], np.roll(poly[:, 0], -1))
    ymin = np.minimum(poly[:, 1], np.roll(poly[:, 1], -1))
    ymax = np.maximum(poly[:, 1], np.roll(poly[:, 1], -1))
    order = np.argsort(xmin, kind="stable")
    for pos, i in enumerate(order):
        for j in order[pos + 1:]:
            if xmin[j] > xmax[i] + EPS:
                break
            if ymin[j] > ymax[i] + EPS or ymin[i] > ymax[j] + EPS:
                continue
            if _edges_conflict(edges, i, j, k):
                return False
    return True


def _edges_conflict(edges, i, j, k) -> bool:
    adjacent = (j - i) % k in (1, k - 1)
    if not adjacent:
        return segments_properly_intersect(edges[i], edges[j])
    # adjacent edges share one endpoint; they conflict only if they fold back onto each other
    if (i + 1) % k != j:
        i, j = j, i
    a, b = edges[i]
    c = edges[j][1]
    if _orient(a, b, c) != 0:
        return False
    return float((a - b) @ (c - b)) > 0.0


def polygon_is_simple_bruteforce(poly) -> bool:
    """All-pairs O(k^2) reference used by the tests."""
    poly = np.asarray(poly, dtype=float)
    k = len(poly)
    edges = [(poly[i], poly[(i + 1) % k]) for i in range(k)]
    if any(np.hypot(*(e[1] - e[0])) <= EPS for e in edges):
        return False
    return not any(_edges_conflict(edges, i, j, k) for i in range(k) for j in range(i + 1, k))


def point_in_polygon(p, poly, check_simple: bool = True, eps: float = EPS) -> str:
    """Classify ``p`` as ``"inside"``, ``"outside"`` or ``"boundary"`` (even-odd rule)."""
    poly = np.asarray(poly, dtype=float)
    if check_simple and not polygon_is_simple(poly):
        raise ValueError("point_in_polygon requires a simple polygon")
    p = as_point(p)
    k = len(poly)
    inside = False
    for i in range(k):
        a, b = poly[i], poly[(i + 1) % k]
        if _point_segment_distance(p, a, b) <= eps:
            return "boundary"
        if (a[1] > p[1]) != (b[1] > p[1]):
            x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if x > p[0]:
                inside = not inside
    return "inside" if inside else "outside"


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    t = np.clip(float((p - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    return float(np.hypot(*(a + t * ab - p)))


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorised even-odd test; boundary handling is left to the caller."""
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    ax, ay = poly[:, 0][None, :], poly[:, 1][None, :]
    bx, by = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = ax + (y - ay) * (bx - ax) / (by - ay)
    crossings = straddle & (xc > x)
    return (np.count_nonzero(crossings, axis=1) % 2) == 1


def distance_to_polyline(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to the closed polygon boundary."""
    a = poly[None, :, :]
    b = np.roll(poly, -1, axis=0)[None, :, :]
    p = points[:, None, :]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=2), 1e-300)
    t = np.clip(np.sum((p - a) * ab, axis=2) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.min(np.linalg.norm(closest - p, axis=2), axis=1)
