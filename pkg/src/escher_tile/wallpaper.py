"""The 17 wallpaper groups as boundary constraints on a gridded basic tile.

Every group is described by a canonical basic tile (a quadrilateral image of the
unit square grid) plus two kinds of boundary data:

* side pairings ``(segment_a, segment_b, g)`` with ``g(v_a[k]) == v_b[k]``;
* mirror segments lying on the axis of a reflection in the group.

Orbit closure turns these into per-vertex constraints: each boundary orbit gets
one representative, and the representative's stabiliser decides whether it is
free, slides on a mirror, or is pinned at a cone point / mirror corner.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import geometry as geo
from .geometry import IDENTITY, Isometry2, Line2
from .mesh import SQRT3, TriMesh, quad_mesh

GROUP_IDS = ("O", "xx", "*x", "**", "2222", "22x", "22*", "2*22", "*2222",
             "442", "4*2", "*442", "333", "3*3", "*333", "632", "*632")
REFLECTION_GROUPS = ("*2222", "*442", "*333", "*632")
INTERESTING_GROUPS = tuple(g for g in GROUP_IDS if g not in REFLECTION_GROUPS)


class GroupError(ValueError):
    pass


@dataclass(frozen=True)
class Free:
    index: int


@dataclass(frozen=True)
class TwinPair:
    primary_index: int
    twin_index: int
    g: Isometry2


@dataclass(frozen=True)
class OnLine:
    index: int
    line: Line2


@dataclass(frozen=True)
class Pinned:
    index: int
    point: np.ndarray


VertexConstraint = Union[Free, TwinPair, OnLine, Pinned]


@dataclass(eq=False)
class ConstraintSet:
    """Boundary constraints of one tile.

    ``pairs`` / ``mirrors`` / ``anchors`` are the raw table entries;
    ``orbit_rep`` and ``orbit_map`` (vertex -> isometry with
    ``v = orbit_map[v](v_rep)``) plus ``per_vertex`` are filled by
    :func:`orbit_closure`.
    """

    num_vertices: int
    boundary: np.ndarray
    pairs: list[TwinPair]
    mirrors: list[OnLine]
    anchors: list[VertexConstraint] = field(default_factory=list)
    generators: list[Isometry2] = field(default_factory=list)
    group: str | None = None
    free_translations: np.ndarray | None = None   # orthonormal basis (k, 2) of unpinned translations
    anchor_natural: VertexConstraint | None = None
    orbit_rep: np.ndarray | None = None
    orbit_map: list[Isometry2] | None = None
    per_vertex: list[VertexConstraint] | None = None

    def kind_counts(self) -> dict[str, int]:
        counts = {"Free": 0, "TwinPair": 0, "OnLine": 0, "Pinned": 0}
        for c in self.per_vertex:
            counts[type(c).__name__] += 1
        return counts

    def boundary_kind_counts(self) -> dict[str, int]:
        counts = {"Free": 0, "TwinPair": 0, "OnLine": 0, "Pinned": 0}
        for v in self.boundary:
            counts[type(self.per_vertex[v]).__name__] += 1
        return counts

    def pinned(self) -> dict[int, np.ndarray]:
        return {c.index: c.point for c in self.per_vertex if isinstance(c, Pinned)}

    def online(self) -> dict[int, Line2]:
        return {c.index: c.line for c in self.per_vertex if isinstance(c, OnLine)}

    def orbits(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for v in self.boundary:
            out.setdefault(int(self.orbit_rep[v]), []).append(int(v))
        return out


# -- canonical tiles ---------------------------------------------------------

Segment = Callable[[int], list[tuple[int, int]]]


def _side(name: str, start: float = 0.0, stop: float = 1.0, reverse: bool = False) -> Segment:
    """Grid coordinates along one side of the square, from fraction ``start`` to ``stop``."""

    def build(n: int) -> list[tuple[int, int]]:
        a, b = start * n, stop * n
        if abs(a - round(a)) > 1e-9 or abs(b - round(b)) > 1e-9:
            raise GroupError(f"side {name}[{start}:{stop}] does not land on grid vertices for n={n}")
        ks = range(int(round(a)), int(round(b)) + 1)
        pts = {"bottom": lambda k: (k, 0), "right": lambda k: (n, k),
               "top": lambda k: (k, n), "left": lambda k: (0, k)}[name]
        out = [pts(k) for k in ks]
        return out[::-1] if reverse else out

    build.label = f"{name}[{start:g}:{stop:g}]{'~' if reverse else ''}"
    return build


@dataclass(frozen=True)
class GroupSpec:
    """Catalog entry: canonical quad, side pairings, mirror sides, cone points."""

    name: str
    shape: str
    corners: tuple
    pairings: tuple          # (segment_a, segment_b, isometry)
    mirror_sides: tuple      # (segment, Line2)
    cones: tuple = ()        # canonical points that must be mesh vertices
    divisor: int = 1         # n must be a multiple of this for cones/splits to land on vertices

    @property
    def interesting(self) -> bool:
        return self.name not in REFLECTION_GROUPS

    def generators(self) -> list[Isometry2]:
        gens = [g for _, _, g in self.pairings] + [geo.reflection(l) for _, l in self.mirror_sides]
        seen, out = set(), []
        for g in gens:
            if g.key() not in seen:
                seen.add(g.key())
                out.append(g)
        return out

    def polygon(self) -> np.ndarray:
        """Canonical tile outline with straight-angle corners dropped."""
        c = np.asarray(self.corners, dtype=float)
        keep = [k for k in range(4)
                if abs(geo.signed_area(c[k - 1], c[k], c[(k + 1) % 4])) > 1e-12]
        return c[keep]


def _rot(deg: float, center=(0.0, 0.0)) -> Isometry2:
    return geo.rotation(np.deg2rad(deg), center)


def _mirror(a, b) -> Line2:
    return Line2.through(a, b)


def _build_catalog() -> dict[str, GroupSpec]:
    sq = ((0, 0), (1, 0), (1, 1), (0, 1))
    rh = ((0, 0), (1, 0), (1.5, SQRT3 / 2), (0.5, SQRT3 / 2))
    T = geo.translation
    B, R, Tp, L = "bottom", "right", "top", "left"
    x0, x1, y0, y1 = _mirror((0, 0), (0, 1)), _mirror((1, 0), (1, 1)), _mirror((0, 0), (1, 0)), _mirror((0, 1), (1, 1))
    rot_b, rot_t = _rot(180, (0.5, 0)), _rot(180, (0.5, 1))
    halves_b = (_side(B, 0, 0.5), _side(B, 0.5, 1, reverse=True), rot_b)
    halves_t = (_side(Tp, 0, 0.5), _side(Tp, 0.5, 1, reverse=True), rot_t)

    # 632 kite: 6-fold centre O, edge midpoints M1/M2 of a side-2 lattice triangle, centroid C
    kite = ((0, 0), (1, 0), (1, 1 / SQRT3), (0.5, SQRT3 / 2))
    # 3*3 triangle O-P-C (30-120-30) with the mirror side split at its midpoint
    tri31 = ((1, 0), (2, 0), (1, 1 / SQRT3), (0, 0))
    tri442 = ((0.5, 0), (1, 0), (1, 1), (0, 0))
    tri333 = ((0.5, 0), (1, 0), (0.5, SQRT3 / 2), (0, 0))
    tri632 = ((0.5, 0), (1, 0), (1, 1 / SQRT3), (0, 0))

    specs = [
        GroupSpec("O", "square", sq,
                  ((_side(B), _side(Tp), T(0, 1)), (_side(L), _side(R), T(1, 0))), ()),
        GroupSpec("xx", "square", sq,
                  ((_side(B), _side(Tp, reverse=True), geo.glide(_mirror((0.5, 0), (0.5, 1)), 1.0)),
                   (_side(L), _side(R), T(1, 0))), ()),
        GroupSpec("*x", "square", sq,
                  ((_side(B), _side(Tp), T(0, 1)),
                   (_side(R, 0, 0.5), _side(R, 0.5, 1), geo.glide(x1, 0.5))),
                  ((_side(L), x0),), divisor=2),
        GroupSpec("**", "square", sq,
                  ((_side(B), _side(Tp), T(0, 1)),), ((_side(L), x0), (_side(R), x1))),
        GroupSpec("2222", "square", sq,
                  ((_side(L), _side(R), T(1, 0)), halves_b, halves_t), (),
                  cones=((0.5, 0), (0.5, 1), (0, 0), (0, 1)), divisor=2),
        GroupSpec("22x", "square", sq,
                  ((_side(L), _side(R, reverse=True), geo.glide(_mirror((0, 0.5), (1, 0.5)), 1.0)),
                   halves_b, halves_t), (), cones=((0.5, 0), (0.5, 1)), divisor=2),
        GroupSpec("22*", "square", sq, (halves_b, halves_t),
                  ((_side(L), x0), (_side(R), x1)), cones=((0.5, 0), (0.5, 1)), divisor=2),
        GroupSpec("2*22", "square", sq, (halves_t,),
                  ((_side(L), x0), (_side(B), y0), (_side(R), x1)), cones=((0.5, 1), (0, 0), (1, 0)),
                  divisor=2),
        GroupSpec("*2222", "square", sq, (),
                  ((_side(L), x0), (_side(B), y0), (_side(R), x1), (_side(Tp), y1)),
                  cones=((0, 0), (1, 0), (1, 1), (0, 1))),
        GroupSpec("442", "square", sq,
                  ((_side(B), _side(L), _rot(90)), (_side(R), _side(Tp), _rot(-90, (1, 1)))), (),
                  cones=((0, 0), (1, 1), (1, 0))),
        GroupSpec("4*2", "square", sq,
                  ((_side(B), _side(L), _rot(90)),), ((_side(R), x1), (_side(Tp), y1)),
                  cones=((0, 0), (1, 1))),
        GroupSpec("*442", "triangle", tri442, (),
                  ((_side(B), y0), (_side(L), y0), (_side(R), x1), (_side(Tp), _mirror((0, 0), (1, 1)))),
                  cones=((0, 0), (1, 0), (1, 1))),
        GroupSpec("333", "rhombus", rh,
                  ((_side(R), _side(B, reverse=True), _rot(120, rh[1])),
                   (_side(Tp), _side(L, reverse=True), _rot(-120, rh[3]))), (),
                  cones=(rh[0], rh[1], rh[3])),
        GroupSpec("3*3", "triangle", tri31,
                  ((_side(R), _side(Tp), _rot(-120, tri31[2])),),
                  ((_side(B), y0), (_side(L), y0)), cones=(tri31[2], tri31[3])),
        GroupSpec("*333", "triangle", tri333, (),
                  ((_side(B), y0), (_side(L), y0), (_side(R), _mirror(tri333[1], tri333[2])),
                   (_side(Tp), _mirror(tri333[3], tri333[2]))),
                  cones=tri333[1:]),
        GroupSpec("632", "kite", kite,
                  ((_side(B), _side(L), _rot(60)), (_side(R), _side(Tp), _rot(-120, kite[2]))), (),
                  cones=(kite[0], kite[1], kite[2])),
        GroupSpec("*632", "triangle", tri632, (),
                  ((_side(B), y0), (_side(L), y0), (_side(R), x1),
                   (_side(Tp), _mirror(tri632[3], tri632[2]))),
                  cones=tri632[1:]),
    ]
    return {s.name: s for s in specs}


_CATALOG = _build_catalog()


def catalog() -> list[GroupSpec]:
    return [_CATALOG[g] for g in GROUP_IDS]


def group_spec(group: str) -> GroupSpec:
    try:
        return _CATALOG[group]
    except KeyError:
        raise GroupError(f"unknown wallpaper group {group!r}; expected one of {', '.join(GROUP_IDS)}") from None


def tiling_generators(group: str) -> list[Isometry2]:
    return group_spec(group).generators()


def build_mesh(group: str, n: int) -> TriMesh:
    spec = group_spec(group)
    if n < 2:
        raise GroupError("n must be >= 2")
    return quad_mesh(n, spec.corners)


def build_tile(group: str, n: int) -> tuple[TriMesh, ConstraintSet]:
    """Gridded canonical basic tile of ``group`` with its closed constraint set."""
    spec = group_spec(group)
    if n < 2:
        raise GroupError("n must be >= 2")
    mesh = quad_mesh(n, spec.corners)
    pos = mesh.vertices
    for cone in spec.cones:
        d = np.min(np.linalg.norm(pos - np.asarray(cone), axis=1))
        if d > 1e-12:
            raise GroupError(f"group {group}: cone point ({cone[0]:g}, {cone[1]:g}) "
                             f"is not a mesh vertex for n={n} (n must be a multiple of {spec.divisor})")
    if n % spec.divisor:
        raise GroupError(f"group {group}: n={n} must be a multiple of {spec.divisor}")

    idx = mesh.grid_index
    pairs = []
    for seg_a, seg_b, g in spec.pairings:
        a, b = seg_a(n), seg_b(n)
        if len(a) != len(b):
            raise GroupError(f"group {group}: paired segments {seg_a.label}/{seg_b.label} differ in length")
        for pa, pb in zip(a, b):
            pairs.append(TwinPair(idx(*pa), idx(*pb), g))
    mirrors = []
    for seg, line in spec.mirror_sides:
        for p in seg(n):
            mirrors.append(OnLine(idx(*p), line))
    cs = ConstraintSet(mesh.num_vertices, mesh.boundary.copy(), pairs, mirrors, [],
                       spec.generators(), group)
    check_table(cs, pos)
    return mesh, orbit_closure(cs, pos)


def check_table(cs: ConstraintSet, canonical: np.ndarray, tol: float = 1e-12) -> float:
    """Largest violation of the raw table by the canonical placement; raises above ``tol``."""
    worst = 0.0
    for c in cs.pairs:
        err = float(np.linalg.norm(geo.apply(c.g, canonical[c.primary_index]) - canonical[c.twin_index]))
        worst = max(worst, err)
    for c in cs.mirrors:
        worst = max(worst, c.line.distance(canonical[c.index]))
    if worst > tol:
        raise GroupError(f"group table inconsistent with canonical tile (residual {worst:.3g})")
    return worst


def orbit_closure(cs: ConstraintSet, canonical: np.ndarray) -> ConstraintSet:
    """Assign each boundary vertex a representative and classify the representatives.

    Walks the pairing graph breadth-first from the lowest-index unvisited vertex.
    A second path reaching a visited vertex yields a stabiliser element of the
    representative: rotations pin it at their centre, reflections put it on a
    line, two distinct reflections pin it at their crossing.  Translations or
    glides here mean the table is malformed.
    """
    nv = cs.num_vertices
    adj: dict[int, list[tuple[int, Isometry2]]] = {}
    for c in cs.pairs:
        adj.setdefault(c.primary_index, []).append((c.twin_index, c.g))
        adj.setdefault(c.twin_index, []).append((c.primary_index, geo.inverse(c.g)))
    mirror_of: dict[int, list[Line2]] = {}
    for c in cs.mirrors:
        mirror_of.setdefault(c.index, []).append(c.line)

    rep = np.arange(nv)
    hmap: list[Isometry2] = [IDENTITY] * nv
    stab: dict[int, list[Isometry2]] = {}
    seen = np.zeros(nv, dtype=bool)
    for start in sorted(int(v) for v in cs.boundary):
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        members = [start]
        while queue:
            a = queue.popleft()
            for b, g in adj.get(a, ()):
                h = geo.compose(g, hmap[a])
                if not seen[b]:
                    seen[b] = True
                    rep[b], hmap[b] = start, h
                    members.append(b)
                    queue.append(b)
                else:
                    s = geo.compose(geo.inverse(hmap[b]), h)
                    if not s.is_identity():
                        stab.setdefault(start, []).append(s)
        for m in members:
            for line in mirror_of.get(m, ()):
                refl = geo.reflection(line)
                s = geo.compose(geo.inverse(hmap[m]), geo.compose(refl, hmap[m]))
                stab.setdefault(start, []).append(s)

    per_vertex: list[VertexConstraint] = [Free(v) for v in range(nv)]
    for r in sorted(set(int(rep[v]) for v in cs.boundary)):
        per_vertex[r] = _classify(r, stab.get(r, []), canonical[r])

    # translations commuting with every constraint leave the tile's placement free;
    # anchor the lowest boundary representative along exactly those directions
    basis = free_translations(cs.generators or [c.g for c in cs.pairs])
    cs.free_translations = basis
    cs.anchors, cs.anchor_natural = [], None
    if len(basis):
        r = int(min(cs.boundary))
        natural = per_vertex[r]
        if len(basis) == 2 and isinstance(natural, Free):
            anchored = Pinned(r, canonical[r].copy())
        elif len(basis) == 1 and isinstance(natural, Free):
            perp = np.array([-basis[0][1], basis[0][0]])
            anchored = OnLine(r, Line2(canonical[r], perp))
        elif len(basis) == 1 and isinstance(natural, OnLine) and abs(natural.line.direction @ basis[0]) > 1 - 1e-9:
            anchored = Pinned(r, canonical[r].copy())
        else:
            raise GroupError(f"cannot anchor vertex {r} ({type(natural).__name__}) against translations {basis}")
        per_vertex[r] = anchored
        cs.anchors, cs.anchor_natural = [anchored], natural
    for v in cs.boundary:
        v = int(v)
        r = int(rep[v])
        if v != r:
            per_vertex[v] = TwinPair(r, v, hmap[v])
        elif isinstance(per_vertex[v], Free):
            twins = [w for w in cs.boundary if rep[w] == r and w != r]
            if twins:
                per_vertex[v] = TwinPair(r, int(twins[0]), hmap[int(twins[0])])

    cs.orbit_rep, cs.orbit_map, cs.per_vertex = rep, hmap, per_vertex
    _check_closure(cs, canonical)
    return cs


def free_translations(isometries: list[Isometry2]) -> np.ndarray:
    """Orthonormal basis of vectors fixed by every linear part (translations of the whole tile
    that keep all constraints satisfied)."""
    m = np.vstack([g.linear - np.eye(2) for g in isometries]) if isometries else np.zeros((1, 2))
    _, sv, vt = np.linalg.svd(m)
    rank = int(np.sum(sv > 1e-9))
    return vt[rank:].copy()


def _classify(r: int, stabiliser: list[Isometry2], p: np.ndarray) -> VertexConstraint:
    lines: list[Line2] = []
    for s in stabiliser:
        fs = geo.fixed_set(s)
        if fs.kind == "all":
            continue
        if fs.kind == "none":
            raise GroupError(f"vertex {r}: orbit cycle composes to a fixed-point-free map {s}")
        if fs.kind == "point":
            if np.linalg.norm(fs.point - p) > 1e-9:
                raise GroupError(f"vertex {r}: rotation centre {fs.point} is not the vertex {p}")
            return Pinned(r, fs.point)
        if fs.line.distance(p) > 1e-9:
            raise GroupError(f"vertex {r}: mirror {fs.line} does not pass through the vertex")
        if not any(fs.line.same_as(l) for l in lines):
            lines.append(fs.line)
    if len(lines) >= 2:
        a, b = lines[0], lines[1]
        m = np.column_stack([a.direction, -b.direction])
        t = np.linalg.solve(m, b.point - a.point)
        return Pinned(r, a.point + t[0] * a.direction)
    if lines:
        return OnLine(r, Line2(p, lines[0].direction))
    return Free(r)


def _check_closure(cs: ConstraintSet, canonical: np.ndarray, tol: float = 1e-10) -> None:
    for v in cs.boundary:
        h = cs.orbit_map[v]
        err = np.linalg.norm(geo.apply(h, canonical[cs.orbit_rep[v]]) - canonical[v])
        if err > tol:
            raise GroupError(f"orbit map of vertex {v} misplaces it by {err:.3g}")
    if any(isinstance(cs.per_vertex[v], Free) for v in cs.boundary) and cs.group in REFLECTION_GROUPS:
        raise GroupError(f"reflection group {cs.group} left a boundary vertex free")
