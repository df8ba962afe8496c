"""Executable tile-validity conditions.

A placement is a valid tile when the boundary constraints hold, no triangle is
inverted and the boundary polygon is simple.  The coverage check is an
independent Monte-Carlo confirmation that copies under the group neither gap
nor overlap.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import Isometry2
from .mesh import TriMesh
from .wallpaper import ConstraintSet, group_spec, tiling_generators

DEFAULT_TOL = 1e-8


class CoverageError(RuntimeError):
    pass


@dataclass
class CoverageStats:
    mean: float
    min: int
    max: int
    samples: int
    copies: int
    resampled: int

    @property
    def exact(self) -> bool:
        return self.min == 1 and self.max == 1


@dataclass
class ValidityReport:
    boundary_residual_max: float
    inverted_triangle_count: int
    boundary_simple: bool
    coverage: CoverageStats | None = None
    tol: float = DEFAULT_TOL
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = (self.boundary_residual_max <= self.tol
                       and self.inverted_triangle_count == 0
                       and self.boundary_simple)

    def summary(self) -> str:
        s = (f"{'PASS' if self.passed else 'FAIL'}: boundary residual {self.boundary_residual_max:.3e} "
             f"(tol {self.tol:g}), inverted triangles {self.inverted_triangle_count}, "
             f"boundary simple {self.boundary_simple}")
        if self.coverage is not None:
            c = self.coverage
            s += (f", coverage mean {c.mean:.4f} min {c.min} max {c.max} "
                  f"over {c.samples} samples / {c.copies} copies")
        return s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _canonical(tile) -> np.ndarray:
    if hasattr(tile, "canonical_positions"):
        return tile.canonical_positions
    return np.asarray(tile, dtype=float)


def check_boundary_conditions(tile, cs: ConstraintSet) -> float:
    """Largest violation of the pairings, mirror lines and pinned points."""
    v = _canonical(tile)
    worst = 0.0
    if cs.pairs:
        a = np.array([c.primary_index for c in cs.pairs])
        b = np.array([c.twin_index for c in cs.pairs])
        for g in {id(c.g): c.g for c in cs.pairs}.values():
            sel = np.array([c.g is g for c in cs.pairs])
            err = np.linalg.norm(geo.apply(g, v[a[sel]]) - v[b[sel]], axis=1)
            worst = max(worst, float(err.max()))
    for c in cs.mirrors:
        worst = max(worst, c.line.distance(v[c.index]))
    for idx, p in cs.pinned().items():
        worst = max(worst, float(np.linalg.norm(v[idx] - p)))
    return worst


def check_orientation(tile, mesh: TriMesh) -> int:
    """Number of triangles with non-positive signed area (rotation does not change it)."""
    v = tile.positions if hasattr(tile, "positions") else np.asarray(tile, dtype=float)
    return int(np.count_nonzero(geo.triangle_areas(v, mesh.triangles) <= 0.0))


def check_boundary_simple(tile, mesh: TriMesh) -> bool:
    v = _canonical(tile)
    return geo.polygon_is_simple(v[mesh.boundary])


def enumerate_group_copies(generators: list[Isometry2], tile_box: np.ndarray, window: np.ndarray,
                           max_depth: int = 64, margin: float = 0.0) -> list[Isometry2]:
    """Group elements whose image of ``tile_box`` meets ``window`` (both ``[[xmin, ymin], [xmax, ymax]]``).

    Breadth-first over right-multiplication by generators and their inverses,
    so each step moves to a neighbouring copy.  Only copies meeting the window
    (grown by ``margin``) are expanded.
    """
    gens = list(generators) + [geo.inverse(g) for g in generators]
    lo, hi = np.asarray(window[0], float) - margin, np.asarray(window[1], float) + margin
    corners = np.array([[tile_box[0][0], tile_box[0][1]], [tile_box[1][0], tile_box[0][1]],
                        [tile_box[1][0], tile_box[1][1]], [tile_box[0][0], tile_box[1][1]]], dtype=float)

    def hits(h: Isometry2) -> bool:
        c = geo.apply(h, corners)
        return bool(np.all(c.max(axis=0) >= lo) and np.all(c.min(axis=0) <= hi))

    start = geo.IDENTITY
    seen = {start.key(): start}
    out = [start] if hits(start) else []
    frontier = deque([(start, 0)])
    while frontier:
        h, depth = frontier.popleft()
        for g in gens:
            c = geo.compose(h, g)
            k = c.key()
            if k in seen:
                continue
            seen[k] = c
            if hits(c):
                if depth + 1 > max_depth:
                    raise CoverageError(f"copy enumeration exceeded depth limit {max_depth}")
                out.append(c)
                frontier.append((c, depth + 1))
    return out


def default_window(poly: np.ndarray, scale: float = 2.0) -> np.ndarray:
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    c, half = 0.5 * (lo + hi), 0.5 * scale * (hi - lo).max()
    return np.array([c - half, c + half])


def coverage_multiplicity(points: np.ndarray, poly: np.ndarray, copies: list[Isometry2],
                          boundary_eps: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Per-point count of copies strictly containing it, and a near-boundary mask."""
    counts = np.zeros(len(points), dtype=np.int64)
    near = np.zeros(len(points), dtype=bool)
    lo, hi = poly.min(axis=0) - boundary_eps, poly.max(axis=0) + boundary_eps
    for h in copies:
        local = geo.apply(geo.inverse(h), points)
        cand = np.all((local >= lo) & (local <= hi), axis=1)
        if not np.any(cand):
            continue
        idx = np.nonzero(cand)[0]
        d = geo.distance_to_polyline(local[idx], poly)
        close = d <= boundary_eps
        near[idx[close]] = True
        inside = geo.points_in_polygon(local[idx], poly)
        counts[idx[inside & ~close]] += 1
    return counts, near


def check_tiling_coverage(tile, mesh: TriMesh, group: str, window=None, num_samples: int = 10_000,
                          seed: int = 0, max_depth: int = 64, generators=None) -> CoverageStats:
    """Monte-Carlo multiplicity of the tiling inside ``window``.

    Samples landing within 1e-6 of a copy boundary are redrawn, so for a valid
    tile every retained sample must be covered exactly once.
    """
    v = _canonical(tile)
    poly = v[mesh.boundary]
    window = default_window(poly) if window is None else np.asarray(window, dtype=float)
    gens = tiling_generators(group) if generators is None else generators
    box = np.array([poly.min(axis=0), poly.max(axis=0)])
    diameter = float(np.linalg.norm(box[1] - box[0]))
    copies = enumerate_group_copies(gens, box, window, max_depth=max_depth, margin=diameter)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(window[0], window[1], size=(num_samples, 2))
    counts, near = coverage_multiplicity(pts, poly, copies)
    resampled = 0
    for _ in range(100):
        if not np.any(near):
            break
        k = int(np.count_nonzero(near))
        resampled += k
        fresh = rng.uniform(window[0], window[1], size=(k, 2))
        c2, n2 = coverage_multiplicity(fresh, poly, copies)
        counts[near], pts[near] = c2, fresh
        new_near = np.zeros_like(near)
        new_near[np.nonzero(near)[0][n2]] = True
        near = new_near
    else:
        raise CoverageError("could not draw samples away from tile boundaries")
    return CoverageStats(float(counts.mean()), int(counts.min()), int(counts.max()),
                         int(num_samples), len(copies), resampled)


def full_report(tile, mesh: TriMesh, cs: ConstraintSet, tol: float = DEFAULT_TOL, coverage: bool = False,
                **coverage_opts) -> ValidityReport:
    """Boundary residual, inverted-triangle count and boundary simplicity, plus optional coverage."""
    residual = check_boundary_conditions(tile, cs)
    inverted = check_orientation(tile, mesh)
    simple = check_boundary_simple(tile, mesh)
    report = ValidityReport(residual, inverted, simple, tol=tol)
    if coverage and report.passed:
        report.coverage = check_tiling_coverage(tile, mesh, cs.group, **coverage_opts)
    return report


def canonical_area(group: str) -> float:
    return abs(geo.polygon_area(group_spec(group).polygon()))
