"""Consistent edge weights for groups whose constraints leave a free translation.

For O, xx, *x and ** the harmonic equations along a free translation ``tau``
form a periodic scalar problem on the quotient graph (orbit representatives as
nodes).  With weights ``w`` it is solvable only if the stationary flow
``F = pi * w`` of the weighted walk carries no net circulation along ``tau``;
symmetric weights satisfy this, generic non-symmetric ones do not.

``balance`` maps any positive weights to consistent ones: it takes the
stationary flow (already balanced at every node) and applies the minimal
relative-entropy correction ``F' = F exp(phi_dst - phi_src + eta . o)`` that
removes the net circulation while keeping every node balanced.  Weights that
are already consistent come back unchanged up to a per-row scale, which the
harmonic equations ignore.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import geometry as geo

NEWTON_TOL = 1e-14
NEWTON_MAX_ITER = 100


class BalanceError(RuntimeError):
    pass


@dataclass
class QuotientGraph:
    src: np.ndarray          # node of each directed mesh edge's source
    dst: np.ndarray          # node of its target
    offset: np.ndarray       # (ne, d) tau-components of the seam translation along the edge
    num_nodes: int
    S: sp.csr_matrix         # (ne, num_nodes - 1 + d): gauge-fixed incidence plus offsets

    @property
    def dim(self) -> int:
        return self.offset.shape[1]


def quotient_graph(mesh, cs, basis: np.ndarray, node_of_rep: dict[int, int]) -> QuotientGraph:
    rep, hmap = cs.orbit_rep, cs.orbit_map
    edges = mesh.directed_edges
    ne, d = len(edges), len(basis)
    src = np.array([node_of_rep[int(rep[i])] for i in edges[:, 0]], dtype=np.int64)
    dst = np.array([node_of_rep[int(rep[j])] for j in edges[:, 1]], dtype=np.int64)
    offset = np.zeros((ne, d))
    for k, (i, j) in enumerate(edges):
        if rep[i] == i and rep[j] == j:
            continue
        hi = hmap[i] if rep[i] != i else geo.IDENTITY
        hj = hmap[j] if rep[j] != j else geo.IDENTITY
        rel = geo.compose(geo.inverse(hi), hj)
        offset[k] = basis @ rel.translation
    offset[np.abs(offset) < 1e-13] = 0.0
    r = len(node_of_rep)
    rows, cols, vals = [], [], []
    for k in range(ne):
        if src[k] != dst[k]:
            if dst[k] > 0:
                rows.append(k); cols.append(dst[k] - 1); vals.append(1.0)
            if src[k] > 0:
                rows.append(k); cols.append(src[k] - 1); vals.append(-1.0)
        for t in range(d):
            if offset[k, t] != 0.0:
                rows.append(k); cols.append(r - 1 + t); vals.append(offset[k, t])
    S = sp.csr_matrix((vals, (rows, cols)), shape=(ne, r - 1 + d))
    return QuotientGraph(src, dst, offset, r, S)


@dataclass
class Balance:
    weights: np.ndarray      # input weights
    pi: np.ndarray           # stationary node measure (sums to 1)
    flow: np.ndarray         # pi[src] * w
    expo: np.ndarray         # exp(S z)
    effective: np.ndarray    # consistent weights handed to the solve
    scale: float
    lu_pi: object
    lu_h: object


def _stationary_matrix(g: QuotientGraph, w: np.ndarray) -> sp.csc_matrix:
    """``[[L^T, 1], [1^T, 0]]`` where ``L`` is the quotient Laplacian (rows sum to zero)."""
    r = g.num_nodes
    # L[src, src] += w ; L[src, dst] -= w   ->   L^T[src, src] += w ; L^T[dst, src] -= w
    rows = np.concatenate([g.src, g.dst, np.arange(r), np.full(r, r)])
    cols = np.concatenate([g.src, g.src, np.full(r, r), np.arange(r)])
    vals = np.concatenate([w, -w, np.ones(r), np.ones(r)])
    return sp.csc_matrix((vals, (rows, cols)), shape=(r + 1, r + 1))


def balance(g: QuotientGraph, w: np.ndarray) -> Balance:
    w = np.asarray(w, dtype=float)
    r = g.num_nodes
    try:
        lu_pi = splu(_stationary_matrix(g, w))
    except RuntimeError as exc:
        raise BalanceError(f"quotient walk has no unique stationary measure: {exc}") from exc
    rhs = np.zeros(r + 1)
    rhs[r] = 1.0
    pi = lu_pi.solve(rhs)[:r]
    if np.any(pi <= 0):
        raise BalanceError("stationary measure is not positive")
    flow = pi[g.src] * w

    # Newton on the convex dual  Phi(z) = sum F exp(S z)
    S, St = g.S, g.S.T.tocsr()
    z = np.zeros(S.shape[1])
    expo = np.ones_like(flow)
    total = float(flow.sum())
    for _ in range(NEWTON_MAX_ITER):
        fp = flow * expo
        grad = St @ fp
        if np.max(np.abs(grad)) <= NEWTON_TOL * total:
            break
        H = (St @ sp.diags(fp) @ S).tocsc()
        step = -splu(H).solve(grad)
        phi0 = float(fp.sum())
        t = 1.0
        # near the optimum the decrease is below rounding: take the full step
        while -float(grad @ step) > 1e-12 * total:
            e_new = np.exp(S @ (z + t * step))
            if float(flow @ e_new) <= phi0 + 1e-4 * t * float(grad @ step) or t < 1e-12:
                break
            t *= 0.5
        z = z + t * step
        expo = np.exp(S @ z)
    else:
        raise BalanceError("weight balancing did not converge")
    fp = flow * expo
    lu_h = splu((St @ sp.diags(fp) @ S).tocsc())
    scale = float(r)
    return Balance(w, pi, flow, expo, scale * fp, scale, lu_pi, lu_h)


def balance_vjp(g: QuotientGraph, b: Balance, grad_effective: np.ndarray) -> np.ndarray:
    """Pull ``dL/d(effective weights)`` back to ``dL/d(input weights)``."""
    u = b.scale * np.asarray(grad_effective, dtype=float)
    fp = b.flow * b.expo
    y = b.lu_h.solve(g.S.T @ (u * fp))
    gF = b.expo * (u - g.S @ y)                       # dL/dF
    r = g.num_nodes
    gpi = np.bincount(g.src, weights=b.weights * gF, minlength=r)
    lam = b.lu_pi.solve(np.append(gpi, 0.0), trans="T")[:r]
    return b.pi[g.src] * (gF - lam[g.src] + lam[g.dst])
