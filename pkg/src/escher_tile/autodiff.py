"""Gradients of scalar losses through the tile solve.

The forward map is ``theta -> w -> (A, b) -> x = A^{-1} b -> V_pre = E x + e
-> V = V_pre R(phi)^T``.  Every step has a hand-written vector-Jacobian
product; the only linear algebra is one transposed solve that reuses the
forward LU factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import TriMesh
from .tilesolve import (ReducedSystem, SolvedTile, TileParams, dweights_dtheta, rotation_matrix,
                        solve_tile)
from .wallpaper import ConstraintSet, build_tile


@dataclass
class PositionGradient:
    """dL/dV for the rotated positions, one 2-vector per vertex."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != 2:
            raise ValueError(f"position gradient must have shape (nv, 2), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("position gradient is not finite")


@dataclass
class ParamGradient:
    theta: np.ndarray
    phi: float

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(self.theta))) if self.theta.size else 0.0, abs(self.phi))


def _drotation(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[-s, -c], [c, -s]])


def backward(system: ReducedSystem, solution: SolvedTile, dLdV) -> ParamGradient:
    """Adjoint pull-back of ``dL/dV`` (rotated positions) to ``dL/dtheta`` and ``dL/dphi``.

    With ``A x = b`` and ``lambda = A^{-T} dL/dx``::

        dL/dw = Bw^T lambda - G^T (lambda[rows] * x[cols])

    where ``G`` / ``Bw`` are the fixed linear maps from weights to the entries
    of ``A`` and ``b``; for balanced weights this is then pulled back through
    the balancing map.  Gradients on pinned vertices fall out automatically
    because pinned coordinates have no DOF columns.
    """
    if system.lu is None:
        raise RuntimeError("backward needs a factorized system; call system.factorize() or use solve_tile")
    g = dLdV.values if isinstance(dLdV, PositionGradient) else PositionGradient(dLdV).values
    st = system.structure
    phi = float(solution.params.phi)
    if g.shape != (st.mesh.num_vertices, 2):
        raise ValueError(f"dLdV has shape {g.shape}, expected {(st.mesh.num_vertices, 2)}")

    v_pre = solution.canonical_positions
    dphi = float(np.sum(g * (v_pre @ _drotation(phi).T)))
    g_pre = g @ rotation_matrix(phi)

    x = solution.x
    dldx = np.zeros(st.ndof)
    dldx[:st.npos] = st.E.T @ g_pre.reshape(-1)
    lam = system.lu.solve_transpose(dldx)
    dldw = st.Bw.T @ lam - st.G.T @ (lam[st.a_rows] * x[st.a_cols])
    dldw = st.weights_vjp(system.balance, dldw)
    dtheta = dldw * dweights_dtheta(solution.params.theta)
    return ParamGradient(np.asarray(dtheta, dtype=float), dphi)


def loss_and_grad(mesh: TriMesh, cs: ConstraintSet, params: TileParams,
                  loss_fn: Callable[[SolvedTile], tuple[float, np.ndarray]]) -> tuple[float, ParamGradient, SolvedTile]:
    """Solve, evaluate ``loss_fn(tile) -> (loss, dL/dV)`` and pull the gradient back."""
    tile = solve_tile(mesh, cs, params)
    loss, dldv = loss_fn(tile)
    return float(loss), backward(tile.system, tile, dldv), tile


def finite_diff_gradient(mesh: TriMesh, cs: ConstraintSet, params: TileParams,
                         loss_fn: Callable[[SolvedTile], float], h: float = 1e-5,
                         include_phi: bool = True) -> ParamGradient:
    """Central differences of ``loss_fn(solve_tile(...))`` in every theta entry and in phi."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.asarray(params.theta, dtype=float)
    out = np.zeros_like(theta)

    def f(th, ph):
        return float(loss_fn(solve_tile(mesh, cs, TileParams(th, ph))))

    for k in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        out[k] = (f(tp, params.phi) - f(tm, params.phi)) / (2 * h)
    dphi = (f(theta, params.phi + h) - f(theta, params.phi - h)) / (2 * h) if include_phi else 0.0
    return ParamGradient(out, dphi)


def relative_error(adjoint: ParamGradient, reference: ParamGradient, floor: float = 1e-8) -> float:
    """Largest absolute difference divided by ``max(max|reference|, floor)``."""
    a = np.append(adjoint.theta, adjoint.phi)
    r = np.append(reference.theta, reference.phi)
    return float(np.max(np.abs(a - r)) / max(float(np.max(np.abs(r))), floor))


@dataclass
class GradcheckResult:
    group: str
    n: int
    seed: int
    rel_error: float
    phi_rel_error: float


def linear_loss(coeffs: np.ndarray):
    """``L(V) = sum(coeffs * V)`` returned as ``(value, gradient)`` and as a plain value."""
    coeffs = np.asarray(coeffs, dtype=float)

    def with_grad(tile: SolvedTile):
        return float(np.sum(coeffs * tile.positions)), coeffs

    def value(tile: SolvedTile):
        return float(np.sum(coeffs * tile.positions))

    return with_grad, value


def gradcheck(group: str, n: int, seed: int = 0, h: float = 1e-5) -> GradcheckResult:
    """Adjoint vs central differences for a random linear loss at random theta and phi."""
    mesh, cs = build_tile(group, n)
    rng = np.random.default_rng(seed)
    params = TileParams.random(mesh, rng, random_phi=True)
    with_grad, value = linear_loss(rng.standard_normal((mesh.num_vertices, 2)))
    _, adj, _ = loss_and_grad(mesh, cs, params, with_grad)
    fd = finite_diff_gradient(mesh, cs, params, value, h=h)
    phi_err = abs(adj.phi - fd.phi) / max(abs(fd.phi), 1e-8)
    return GradcheckResult(group, n, seed, relative_error(adj, fd), phi_err)
