"""Parameterised-Laplacian tile solve.

Vertex positions are an affine function of a reduced DOF vector ``x``::

    V = E @ x + e        (interleaved x/y rows, 2 per vertex)

where interior vertices and free orbit representatives own two DOFs, mirror
representatives own one (position along the mirror), pinned vertices own none,
and twins are their representative pushed through the orbit isometry.  The
harmonic conditions over the tiled one-rings are then the Galerkin system::

    A = E^T (L (x) I2) E,      b = -E^T (L (x) I2) e

Both ``A.data`` and ``b`` are linear in the directed-edge weights, so the
structure precomputes ``A.data = G @ w`` and ``b = Bw @ w`` once per tile.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.linalg import splu
from scipy.special import expit

from . import geometry as geo
from .balance import Balance, QuotientGraph, balance, balance_vjp, quotient_graph
from .mesh import TriMesh
from .wallpaper import ConstraintSet, OnLine, Pinned

log = logging.getLogger(__name__)

W_MIN, W_MAX = 0.05, 0.95
W_SPAN = W_MAX - W_MIN


class SolveError(RuntimeError):
    pass


@dataclass
class TileParams:
    theta: np.ndarray
    phi: float = 0.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if not np.all(np.isfinite(self.theta)) or not np.isfinite(self.phi):
            raise ValueError("TileParams must be finite")

    @classmethod
    def zeros(cls, mesh: TriMesh) -> "TileParams":
        return cls(np.zeros(len(mesh.directed_edges)), 0.0)

    @classmethod
    def random(cls, mesh: TriMesh, rng: np.random.Generator, scale: float = 1.0,
               random_phi: bool = False) -> "TileParams":
        theta = scale * rng.standard_normal(len(mesh.directed_edges))
        phi = float(rng.uniform(0.0, 2.0 * np.pi)) if random_phi else 0.0
        return cls(theta, phi)

    def copy(self) -> "TileParams":
        return TileParams(self.theta.copy(), float(self.phi))


def weights_from_theta(theta) -> np.ndarray:
    """Squashed sigmoid ``0.05 + 0.9 * sigmoid(theta)``, written around the midpoint so theta = 0 gives 0.5 exactly."""
    return 0.5 * (W_MIN + W_MAX) + 0.5 * W_SPAN * np.tanh(0.5 * np.asarray(theta, dtype=float))


def dweights_dtheta(theta) -> np.ndarray:
    s = expit(np.asarray(theta, dtype=float))
    return W_SPAN * s * (1.0 - s)


def theta_from_weights(w) -> np.ndarray:
    return 2.0 * np.arctanh((np.asarray(w, dtype=float) - 0.5 * (W_MIN + W_MAX)) / (0.5 * W_SPAN))


def rotation_matrix(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def full_laplacian(mesh: TriMesh, weights) -> sp.csr_matrix:
    """``L[i, j] = -w_ij`` on edges, ``L[i, i] = sum_k w_ik``; rows sum to zero."""
    w = np.asarray(weights, dtype=float)
    i, j = mesh.directed_edges[:, 0], mesh.directed_edges[:, 1]
    n = mesh.num_vertices
    off = sp.coo_matrix((-w, (i, j)), shape=(n, n))
    diag = sp.coo_matrix((w, (i, i)), shape=(n, n))
    return (off + diag).tocsr()


class TileStructure:
    """Symbolic part of the reduced system: DOF layout, weight-to-entry maps, ordering.

    Depends only on connectivity and constraints, so one instance serves every
    solve and backward pass on the same tile.

    Groups whose constraints all commute with some translation leave the tile's
    placement free along that direction.  The anchor vertex removes those
    unknowns, but its equations are kept as test functions and balanced by one
    drift unknown per free direction: every vertex may sit off its weighted
    neighbour average by the same vector ``kappa``.  The weights are made
    consistent first (see :mod:`escher_tile.balance`), so ``kappa`` solves to
    zero up to rounding and every equation, the anchor's included, holds.
    """

    def __init__(self, mesh: TriMesh, cs: ConstraintSet):
        self.mesh = mesh
        self.cs = cs
        nv = mesh.num_vertices
        self.num_edges = len(mesh.directed_edges)
        basis = cs.free_translations if cs.free_translations is not None else np.zeros((0, 2))
        self.drift_basis = np.asarray(basis, dtype=float).reshape(-1, 2)
        natural = {}
        if cs.anchor_natural is not None:
            natural[cs.anchors[0].index] = cs.anchor_natural

        self.dof_kind, self.dof_index, self.rows, self.offset, npos = self._layout(cs, {})
        self.test_kind, _, self.test_rows, _, ntest = self._layout(cs, natural)
        self.npos = npos
        self.ndrift = len(self.drift_basis)
        self.ndof = npos + self.ndrift
        if ntest != self.ndof:
            raise SolveError(f"anchoring left {ntest} equations for {self.ndof} unknowns")
        if self.ndof == 0:
            raise SolveError("constraint set leaves no degrees of freedom")
        self.E = self._rows_matrix(self.rows, npos)
        self.E_test = self._rows_matrix(self.test_rows, ntest)
        self._build_weight_maps()
        self._perm_c = None
        self.quotient: QuotientGraph | None = None
        if self.ndrift:
            reps = [v for v in range(nv) if cs.orbit_rep[v] == v]
            if any(self.test_kind[v] == "pinned" for v in reps):
                raise SolveError("free translation with pinned vertices")
            self.quotient = quotient_graph(mesh, cs, self.drift_basis, {v: n for n, v in enumerate(reps)})

    def effective_weights(self, w: np.ndarray) -> tuple[np.ndarray, Balance | None]:
        """Weights the system is assembled from: ``w`` itself, or its balanced form."""
        if self.quotient is None:
            return w, None
        b = balance(self.quotient, w)
        return b.effective, b

    def weights_vjp(self, b: Balance | None, grad_effective: np.ndarray) -> np.ndarray:
        return grad_effective if b is None else balance_vjp(self.quotient, b, grad_effective)

    @staticmethod
    def _layout(cs: ConstraintSet, override: dict):
        nv = cs.num_vertices
        pinned, online = cs.pinned(), cs.online()
        rep = cs.orbit_rep
        kind = np.empty(nv, dtype=object)
        index = np.full((nv, 2), -1, dtype=np.int64)
        rows: list[list[tuple[int, float]]] = [[] for _ in range(2 * nv)]
        e = np.zeros(2 * nv)
        ndof = 0
        for v in range(nv):
            if rep[v] != v:
                continue
            c = override.get(v)
            if c is not None:
                is_pin, line = isinstance(c, Pinned), c.line if isinstance(c, OnLine) else None
            else:
                is_pin, line = v in pinned, online.get(v)
            if is_pin:
                kind[v] = "pinned"
                e[2 * v: 2 * v + 2] = pinned[v] if v in pinned else c.point
            elif line is not None:
                kind[v] = "online"
                index[v, 0] = ndof
                rows[2 * v] = [(ndof, float(line.direction[0]))]
                rows[2 * v + 1] = [(ndof, float(line.direction[1]))]
                e[2 * v: 2 * v + 2] = line.point
                ndof += 1
            else:
                kind[v] = "free"
                index[v] = (ndof, ndof + 1)
                rows[2 * v] = [(ndof, 1.0)]
                rows[2 * v + 1] = [(ndof + 1, 1.0)]
                ndof += 2
        for v in range(nv):
            r = rep[v]
            if r == v:
                continue
            kind[v] = "twin"
            h = cs.orbit_map[v]
            for a in range(2):
                acc: dict[int, float] = {}
                for b in range(2):
                    if h.linear[a, b] != 0.0:
                        for d, c in rows[2 * r + b]:
                            acc[d] = acc.get(d, 0.0) + h.linear[a, b] * c
                rows[2 * v + a] = [(d, c) for d, c in acc.items() if c != 0.0]
            e[2 * v: 2 * v + 2] = geo.apply(h, e[2 * r: 2 * r + 2])
        return kind, index, rows, e, ndof

    @staticmethod
    def _rows_matrix(rows, ncols) -> sp.csr_matrix:
        er, ec, ed = [], [], []
        for a, row in enumerate(rows):
            for d, c in row:
                er.append(a)
                ec.append(d)
                ed.append(c)
        return sp.csr_matrix((ed, (er, ec)), shape=(len(rows), ncols))

    def _build_weight_maps(self):
        rows, test, e = self.rows, self.test_rows, self.offset
        trip_p, trip_q, trip_k, trip_c = [], [], [], []
        b_p, b_k, b_c = [], [], []
        for k, (i, j) in enumerate(self.mesh.directed_edges):
            for c in range(2):
                a = 2 * i + c
                if not test[a]:
                    continue
                diff = e[2 * i + c] - e[2 * j + c]
                for p, eap in test[a]:
                    for q, ebq in rows[2 * i + c]:
                        trip_p.append(p); trip_q.append(q); trip_k.append(k); trip_c.append(eap * ebq)
                    for q, ebq in rows[2 * j + c]:
                        trip_p.append(p); trip_q.append(q); trip_k.append(k); trip_c.append(-eap * ebq)
                    # drift: vertex i sits kappa away from its weighted neighbour average
                    for t, tau in enumerate(self.drift_basis):
                        if tau[c] != 0.0:
                            trip_p.append(p); trip_q.append(self.npos + t); trip_k.append(k)
                            trip_c.append(-eap * tau[c])
                    if diff != 0.0:
                        b_p.append(p); b_k.append(k); b_c.append(-eap * diff)
        trip_p, trip_q = np.array(trip_p, dtype=np.int64), np.array(trip_q, dtype=np.int64)
        # CSC layout: sort entries by (col, row)
        lin = trip_q * self.ndof + trip_p
        uniq, entry = np.unique(lin, return_inverse=True)
        self.a_rows = (uniq % self.ndof).astype(np.int32)
        self.a_cols = (uniq // self.ndof).astype(np.int32)
        self.a_indptr = np.searchsorted(self.a_cols, np.arange(self.ndof + 1)).astype(np.int32)
        self.G = sp.csr_matrix((trip_c, (entry, trip_k)), shape=(len(uniq), self.num_edges))
        self.Bw = sp.csr_matrix((b_c, (b_p, b_k)), shape=(self.ndof, self.num_edges))

    def matrix(self, w: np.ndarray) -> sp.csc_matrix:
        data = self.G @ w
        return sp.csc_matrix((data, self.a_rows.copy(), self.a_indptr.copy()), shape=(self.ndof, self.ndof))

    def rhs(self, w: np.ndarray) -> np.ndarray:
        return self.Bw @ w

    def positions(self, x: np.ndarray) -> np.ndarray:
        """Pre-rotation vertex positions ``(nv, 2)`` from reduced DOFs."""
        return (self.E @ x[:self.npos] + self.offset).reshape(-1, 2)

    def drift(self, x: np.ndarray) -> np.ndarray:
        """Uniform off-average displacement ``kappa`` (zero vector when there is no free translation)."""
        if not self.ndrift:
            return np.zeros(2)
        return self.drift_basis.T @ x[self.npos:]

    def factorize(self, A: sp.csc_matrix):
        """Sparse LU; the fill-reducing column order is computed once and reused."""
        try:
            if self._perm_c is None:
                lu = splu(A, permc_spec="COLAMD")
                self._perm_c = lu.perm_c.copy()
                inv = np.empty_like(self._perm_c)
                inv[self._perm_c] = np.arange(len(inv))
                self._order = inv
            lu = splu(A[:, self._order], permc_spec="NATURAL")
        except RuntimeError as exc:
            raise SolveError(f"singular tile system: {exc}") from exc
        return _PermutedLU(lu, self._order)


class _PermutedLU:
    """LU of ``A[:, order]`` exposing solves with ``A`` and ``A^T``."""

    def __init__(self, lu, order):
        self.lu = lu
        self.order = order

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = self.lu.solve(rhs)
        x = np.empty_like(y)
        x[self.order] = y
        return x

    def solve_transpose(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(np.ascontiguousarray(rhs[self.order]), trans="T")


def structure_for(mesh: TriMesh, cs: ConstraintSet) -> TileStructure:
    """Cached :class:`TileStructure` for this (mesh, constraints) pair."""
    cached = getattr(cs, "_structure", None)
    if cached is None or cached.mesh is not mesh:
        cached = TileStructure(mesh, cs)
        cs._structure = cached
    return cached


@dataclass
class ReducedSystem:
    A: sp.csc_matrix
    b: np.ndarray
    weights: np.ndarray            # input weights
    structure: TileStructure
    lu: object = None
    effective: np.ndarray = None   # weights actually assembled (differs only with a free translation)
    balance: Balance | None = None

    @property
    def dof_kind(self) -> np.ndarray:
        return self.structure.dof_kind

    def factorize(self):
        if self.lu is None:
            self.lu = self.structure.factorize(self.A)
        return self.lu


def assemble(mesh: TriMesh, cs: ConstraintSet, weights) -> ReducedSystem:
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(mesh.directed_edges),):
        raise ValueError(f"expected {len(mesh.directed_edges)} weights, got {w.shape}")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    st = structure_for(mesh, cs)
    we, bal = st.effective_weights(w)
    return ReducedSystem(st.matrix(we), st.rhs(we), w, st, effective=we, balance=bal)


@dataclass
class SolvedTile:
    positions: np.ndarray          # after the global rotation
    params: TileParams
    group: str | None
    residual: float
    x: np.ndarray = field(repr=False, default=None)
    system: ReducedSystem = field(repr=False, default=None)

    @property
    def canonical_positions(self) -> np.ndarray:
        """Positions with the global rotation undone (the group's own frame)."""
        return self.positions @ rotation_matrix(self.params.phi)

    @property
    def pre_rotation(self) -> np.ndarray:
        return self.canonical_positions


def solve_tile(mesh: TriMesh, cs: ConstraintSet, params: TileParams) -> SolvedTile:
    theta = np.asarray(params.theta, dtype=float)
    if theta.shape != (len(mesh.directed_edges),):
        raise ValueError(f"theta has shape {theta.shape}, mesh has {len(mesh.directed_edges)} directed edges")
    system = assemble(mesh, cs, weights_from_theta(theta))
    lu = system.factorize()
    x = lu.solve(system.b)
    if not np.all(np.isfinite(x)):
        raise SolveError("tile solve produced non-finite values")
    residual = float(np.max(np.abs(system.A @ x - system.b))) if len(x) else 0.0
    v = system.structure.positions(x)
    positions = v @ rotation_matrix(params.phi).T
    return SolvedTile(positions, params.copy(), cs.group, residual, x, system)


def harmonic_residual(mesh: TriMesh, cs: ConstraintSet, positions: np.ndarray, weights) -> float:
    """Max reduced-equation residual of canonical-frame ``positions``.

    Uses the same (balanced, for groups with a free translation) weights that
    :func:`solve_tile` assembles from.
    """
    st = structure_for(mesh, cs)
    w, _ = st.effective_weights(np.asarray(weights, dtype=float))
    lv = (sp.kron(full_laplacian(mesh, w), sp.eye(2)) @ np.asarray(positions).reshape(-1))
    r = st.E_test.T @ lv
    return float(np.max(np.abs(r))) if len(r) else 0.0


def _central_weights(d: np.ndarray) -> tuple[np.ndarray, bool]:
    """Weights in the admissible range balancing offsets ``d`` with the widest margin.

    Used when mean-value coordinates of a row spread wider than the range
    allows: any positive combination balancing the row is an equally valid
    choice.  Returns the weights and whether they fit without clamping.
    """
    d = np.asarray(d, dtype=float).reshape(len(d), -1)
    k = len(d)
    # variables: weights (k) and margin s; maximise s
    c = np.zeros(k + 1)
    c[-1] = -1.0
    a_eq = np.hstack([d.T, np.zeros((d.shape[1], 1))])
    a_ub = np.vstack([np.hstack([-np.eye(k), np.ones((k, 1))]), np.hstack([np.eye(k), np.ones((k, 1))])])
    b_ub = np.concatenate([np.full(k, -W_MIN), np.full(k, W_MAX)])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=np.zeros(d.shape[1]),
                  bounds=[(0, None)] * k + [(None, None)], method="highs")
    if res.status != 0:
        return np.full(k, W_MIN), False
    return res.x[:k], bool(res.x[-1] > 1e-12)


@dataclass
class RecoveredParams:
    params: TileParams
    barycentric: np.ndarray     # normalised mean-value weight of every directed edge (rows sum to 1)
    weights: np.ndarray         # per-row rescaled weights before clamping
    clamped: int

    @property
    def clamping_occurred(self) -> bool:
        return self.clamped > 0


def recover_theta(mesh: TriMesh, cs: ConstraintSet, positions: np.ndarray, phi: float = 0.0,
                  check: bool = True) -> RecoveredParams:
    """Laplacian parameters that reproduce a valid tile.

    Mean-value coordinates are accumulated triangle by triangle over each
    orbit's tiled one-ring (neighbours pulled back through the orbit
    isometries).  The harmonic equation of a row is invariant to scaling all
    its weights, so each row is rescaled to sit geometrically centred in the
    admissible weight range before converting to ``theta``.  Rows whose
    mean-value weights spread wider than 19:1 are replaced by the most central
    admissible weights balancing the same row (a small LP); rows where no such
    weights exist are clamped and counted.
    """
    pos = np.asarray(positions, dtype=float) @ rotation_matrix(phi)
    if check:
        from .validity import full_report
        report = full_report(pos, mesh, cs)
        if not report.passed:
            raise ValueError(f"positions are not a valid tile: {report.summary()}")
    st = structure_for(mesh, cs)
    rep, hmap = cs.orbit_rep, cs.orbit_map
    eidx = mesh.edge_index()
    ne = len(mesh.directed_edges)
    w = np.zeros(ne)
    # neighbour offsets in the representative's frame, for the row equations
    offset = np.zeros((ne, 2))
    for k, (i, j) in enumerate(mesh.directed_edges):
        if rep[i] != i:
            offset[k] = geo.apply(geo.inverse(hmap[i]), pos[j]) - pos[rep[i]]
        else:
            offset[k] = pos[j] - pos[i]
    for tri in mesh.triangles:
        for s in range(3):
            k, a, b = tri[s], tri[(s + 1) % 3], tri[(s + 2) % 3]
            if st.test_kind[rep[k]] == "pinned":
                continue
            ka, kb = eidx[(int(k), int(a))], eidx[(int(k), int(b))]
            da, db = offset[ka], offset[kb]
            la, lb = np.hypot(*da), np.hypot(*db)
            ang = abs(np.arctan2(geo.cross(da, db), float(da @ db)))
            t = np.tan(0.5 * ang)
            w[ka] += t / la
            w[kb] += t / lb

    online = cs.online()
    row_of = rep[mesh.directed_edges[:, 0]]
    bary = np.zeros_like(w)
    scaled = np.zeros_like(w)
    clamped = 0
    lo, hi = W_MIN + 1e-12, W_MAX - 1e-12
    for r in np.unique(row_of):
        sel = row_of == r
        if st.test_kind[r] == "pinned":
            scaled[sel] = 0.5
            continue
        ws = w[sel]
        bary[sel] = ws / ws.sum()
        ws = ws * np.sqrt(W_MIN * W_MAX / (ws.min() * ws.max()))
        if ws.min() < lo or ws.max() > hi:
            d = offset[sel]
            if st.test_kind[r] == "online":
                d = d @ online[r].direction if r in online else d @ cs.anchor_natural.line.direction
            ws, ok = _central_weights(d)
            if not ok:
                clamped += 1
        scaled[sel] = ws
    theta = theta_from_weights(np.clip(scaled, W_MIN + 1e-12, W_MAX - 1e-12))
    if clamped:
        warnings.warn(f"{clamped} weight rows exceeded the admissible ratio and were clamped; "
                      "re-solving will not reproduce the input exactly", RuntimeWarning, stacklevel=2)
    return RecoveredParams(TileParams(theta, phi), bary, scaled, clamped)
