import numpy as np
import pytest

from escher_tile.autodiff import (ParamGradient, PositionGradient, backward, finite_diff_gradient, gradcheck,
                                  linear_loss, loss_and_grad, relative_error)
from escher_tile.tilesolve import TileParams, assemble, solve_tile, weights_from_theta
from escher_tile.wallpaper import build_tile


def test_zero_upstream_gives_zero_gradient(rng):
    mesh, cs = build_tile("442", 4)
    tile = solve_tile(mesh, cs, TileParams.random(mesh, rng, random_phi=True))
    g = backward(tile.system, tile, np.zeros((mesh.num_vertices, 2)))
    assert g.max_abs() == 0.0


def test_unfactorized_system_rejected(rng):
    mesh, cs = build_tile("O", 4)
    tile = solve_tile(mesh, cs, TileParams.zeros(mesh))
    system = assemble(mesh, cs, weights_from_theta(tile.params.theta))
    with pytest.raises(RuntimeError):
        backward(system, tile, np.zeros((mesh.num_vertices, 2)))


def test_position_gradient_shape_checked():
    with pytest.raises(ValueError):
        PositionGradient(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        PositionGradient(np.array([[np.nan, 0.0]]))


def test_fd_of_constant_loss_is_zero(rng):
    mesh, cs = build_tile("O", 3)
    g = finite_diff_gradient(mesh, cs, TileParams.random(mesh, rng), lambda tile: 3.0)
    assert g.max_abs() <= 1e-9


@pytest.mark.parametrize("group", ["O", "xx", "*x", "**", "2222", "22x", "22*", "2*22", "442", "4*2", "333",
                                   "3*3", "632", "*442"])
def test_adjoint_matches_finite_differences(group):
    n = 4 if group not in ("632", "3*3", "333") else 3
    n = n + n % 2 if group in ("*x", "2222", "22x", "22*", "2*22") else n
    r = gradcheck(group, n, seed=3)
    assert r.rel_error < 1e-6, r


def test_nonlinear_loss_gradient(rng):
    """Squared distance of every vertex to a target point set."""
    mesh, cs = build_tile("333", 3)
    params = TileParams.random(mesh, rng, random_phi=True)
    target = rng.standard_normal((mesh.num_vertices, 2))

    def loss(tile):
        d = tile.positions - target
        return float(np.sum(d ** 2)), 2 * d

    _, adj, _ = loss_and_grad(mesh, cs, params, loss)
    fd = finite_diff_gradient(mesh, cs, params, lambda t: loss(t)[0])
    assert relative_error(adj, fd) < 1e-6


def test_relative_error_definition():
    a = ParamGradient(np.array([1.0, 2.0]), 0.0)
    b = ParamGradient(np.array([1.0, 2.5]), 0.0)
    assert relative_error(a, b) == pytest.approx(0.5 / 2.5)


def test_linear_loss_helpers(rng):
    mesh, cs = build_tile("O", 3)
    coeffs = rng.standard_normal((mesh.num_vertices, 2))
    with_grad, value = linear_loss(coeffs)
    tile = solve_tile(mesh, cs, TileParams.zeros(mesh))
    v, g = with_grad(tile)
    assert v == value(tile) and g is coeffs
