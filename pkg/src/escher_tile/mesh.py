"""Triangle-mesh container and the regular-grid generators used for basic tiles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import polygon_area

SQRT3 = np.sqrt(3.0)
# maps the unit square onto the unit-edge 60 degree rhombus
RHOMBUS_SHEAR = np.array([[1.0, 0.5], [0.0, SQRT3 / 2.0]])


@dataclass(eq=False)
class TriMesh:
    """Fixed-connectivity triangle mesh of a topological disk.

    ``directed_edges`` holds both orientations of every undirected edge; the
    position of an edge in that array is the index of its weight parameter.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray = None
    grid_n: int | None = None
    directed_edges: np.ndarray = field(init=False)
    boundary: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.uvs is None:
            self.uvs = self.vertices.copy()
        self.uvs = np.asarray(self.uvs, dtype=float)
        self.directed_edges = _directed_edges(self.triangles)
        self.boundary = boundary_loop(self)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.directed_edges) // 2

    def neighbors(self) -> list[np.ndarray]:
        out = [[] for _ in range(self.num_vertices)]
        for i, j in self.directed_edges:
            out[i].append(j)
        return [np.array(sorted(x), dtype=np.int64) for x in out]

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): k for k, (i, j) in enumerate(self.directed_edges)}

    def vertex_triangles(self) -> list[list[int]]:
        out = [[] for _ in range(self.num_vertices)]
        for t, tri in enumerate(self.triangles):
            for v in tri:
                out[v].append(t)
        return out

    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + len(self.triangles)

    def grid_index(self, i: int, j: int) -> int:
        if self.grid_n is None:
            raise ValueError("mesh was not built from a grid")
        return j * (self.grid_n + 1) + i


def _directed_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]])
    e = np.unique(e, axis=0)
    return e


def boundary_loop(mesh: TriMesh) -> np.ndarray:
    """CCW cycle of boundary vertex indices.

    A boundary edge is a half-edge ``(a, b)`` of some triangle whose twin ``(b, a)``
    belongs to no triangle; following those half-edges traces the boundary CCW.
    """
    tris = mesh.triangles
    half = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    present = {(int(a), int(b)) for a, b in half}
    nxt = {}
    for a, b in present:
        if (b, a) not in present:
            if a in nxt:
                raise ValueError(f"non-manifold boundary at vertex {a}")
            nxt[a] = b
    if not nxt:
        raise ValueError("mesh has no boundary; expected a disk")
    start = min(nxt)
    loop = [start]
    while True:
        v = nxt[loop[-1]]
        if v == start:
            break
        if len(loop) > len(nxt):
            raise ValueError("boundary does not close")
        loop.append(v)
    if len(loop) != len(nxt):
        raise ValueError("boundary has more than one component; expected a disk")
    return np.array(loop, dtype=np.int64)


def _grid_connectivity(n: int) -> np.ndarray:
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            # diagonal from lower-left to upper-right in every cell
            tris.append((a, b, c))
            tris.append((a, c, d))
    return np.array(tris, dtype=np.int64)


def grid_uv(n: int) -> np.ndarray:
    """``(n+1)^2`` grid coordinates ``(i/n, j/n)``, vertex index ``j*(n+1)+i``."""
    s = np.arange(n + 1) / n
    u, v = np.meshgrid(s, s)
    return np.stack([u.ravel(), v.ravel()], axis=1)


def grid_mesh(n: int) -> TriMesh:
    """Regular triangulation of the unit square with ``n`` cells per side."""
    if n < 1:
        raise ValueError("n must be >= 1")
    uv = grid_uv(n)
    return TriMesh(uv, _grid_connectivity(n), uvs=uv.copy(), grid_n=n)


def sheared_mesh(n: int, shear: np.ndarray = RHOMBUS_SHEAR) -> TriMesh:
    """``grid_mesh(n)`` pushed through a linear map (default: the 60 degree rhombus)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    shear = np.asarray(shear, dtype=float)
    if np.linalg.det(shear) <= 0:
        raise ValueError("shear must preserve orientation")
    uv = grid_uv(n)
    v = uv @ shear.T
    return TriMesh(v, _grid_connectivity(n), uvs=v.copy(), grid_n=n)


def quad_mesh(n: int, corners) -> TriMesh:
    """Grid mapped piecewise-affinely onto a quadrilateral.

    ``corners`` are the images of the square corners (0,0), (1,0), (1,1), (0,1).
    The two halves of the square either side of the (0,0)-(1,1) diagonal are
    mapped affinely onto triangles ``c0 c1 c2`` and ``c0 c2 c3``; the grid's
    diagonals run the same way, so every mesh triangle stays in one half.
    A triangle-shaped tile is obtained by putting ``c0`` (or ``c2``) on a side.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    c = np.asarray(corners, dtype=float).reshape(4, 2)
    for tri in ((0, 1, 2), (0, 2, 3)):
        if polygon_area(c[list(tri)]) <= 0:
            raise ValueError("quad halves must be positively oriented")
    uv = grid_uv(n)
    lower = uv[:, 0] >= uv[:, 1]
    u, v = uv[:, 0:1], uv[:, 1:2]
    # lower half: (0,0)->c0, (1,0)->c1, (1,1)->c2 ; upper half: (0,0)->c0, (1,1)->c2, (0,1)->c3
    p_lo = c[0] + (u - v) * (c[1] - c[0]) + v * (c[2] - c[0])
    p_hi = c[0] + u * (c[2] - c[0]) + (v - u) * (c[3] - c[0])
    pts = np.where(lower[:, None], p_lo, p_hi)
    # exact corner/edge values independent of the half that produced them
    ij = np.rint(uv * n).astype(int)
    for k in range(len(pts)):
        i, j = ij[k]
        if j == 0:
            pts[k] = c[0] + (i / n) * (c[1] - c[0]) if i < n else c[1]
        elif i == n:
            pts[k] = c[1] + (j / n) * (c[2] - c[1]) if j < n else c[2]
        elif j == n:
            pts[k] = c[3] + (i / n) * (c[2] - c[3]) if i > 0 else c[3]
        elif i == 0:
            pts[k] = c[0] + (j / n) * (c[3] - c[0])
    return TriMesh(pts, _grid_connectivity(n), uvs=pts.copy(), grid_n=n)
