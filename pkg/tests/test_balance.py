import numpy as np
import pytest

from escher_tile.balance import balance, balance_vjp
from escher_tile.tilesolve import structure_for, weights_from_theta
from escher_tile.wallpaper import build_tile

FREE_GROUPS = ["O", "xx", "*x", "**"]


def _graph(group, n=6):
    mesh, cs = build_tile(group, n)
    return mesh, structure_for(mesh, cs).quotient


@pytest.mark.parametrize("group", FREE_GROUPS)
def test_balanced_flow_is_consistent(group, rng):
    _, g = _graph(group)
    w = weights_from_theta(2.0 * rng.standard_normal(len(g.src)))
    b = balance(g, w)
    f = b.effective
    assert np.all(f > 0)
    # every node balanced: inflow equals outflow
    out = np.bincount(g.src, weights=f, minlength=g.num_nodes)
    inn = np.bincount(g.dst, weights=f, minlength=g.num_nodes)
    np.testing.assert_allclose(out, inn, atol=1e-12 * f.sum())
    # no net circulation along the free translation
    np.testing.assert_allclose(g.offset.T @ f, 0.0, atol=1e-12 * f.sum())


def test_stationary_measure():
    _, g = _graph("O")
    w = np.linspace(0.1, 0.9, len(g.src))
    b = balance(g, w)
    assert b.pi.sum() == pytest.approx(1.0, abs=1e-14)
    flow_out = np.bincount(g.src, weights=b.flow, minlength=g.num_nodes)
    flow_in = np.bincount(g.dst, weights=b.flow, minlength=g.num_nodes)
    np.testing.assert_allclose(flow_out, flow_in, atol=1e-15)


@pytest.mark.parametrize("group", FREE_GROUPS)
def test_symmetric_weights_pass_through(group, rng):
    """Symmetric weights are already consistent: the result only rescales each row."""
    mesh, g = _graph(group)
    eidx = mesh.edge_index()
    half = rng.uniform(0.1, 0.9, len(g.src))
    w = np.array([half[min(k, eidx[(int(j), int(i))])] for k, (i, j) in enumerate(mesh.directed_edges)])
    b = balance(g, w)
    ratio = b.effective / w
    for node in range(g.num_nodes):
        r = ratio[g.src == node]
        assert np.ptp(r) <= 1e-12 * r.max()


@pytest.mark.parametrize("group", ["O", "xx"])
def test_vjp_matches_finite_differences(group, rng):
    _, g = _graph(group, 4)
    w = weights_from_theta(rng.standard_normal(len(g.src)))
    c = rng.standard_normal(len(g.src))
    grad = balance_vjp(g, balance(g, w), c)
    h = 1e-6
    fd = np.empty_like(w)
    for k in range(len(w)):
        wp, wm = w.copy(), w.copy()
        wp[k] += h
        wm[k] -= h
        fd[k] = (c @ balance(g, wp).effective - c @ balance(g, wm).effective) / (2 * h)
    assert np.max(np.abs(grad - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_groups_without_free_translation_have_no_quotient():
    mesh, cs = build_tile("2222", 4)
    st = structure_for(mesh, cs)
    assert st.quotient is None
    w = np.full(len(mesh.directed_edges), 0.3)
    assert st.effective_weights(w)[0] is w
