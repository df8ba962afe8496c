import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import LinearRing

from escher_tile import geometry as geo
from escher_tile.geometry import IDENTITY, Line2

from conftest import solved

ROT90 = geo.rotation(np.pi / 2)
REFLECT_X = geo.reflection(Line2((0, 0), (1, 0)))
UNIT_SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)

angles = st.floats(-np.pi, np.pi, allow_nan=False)
coords = st.floats(-5, 5, allow_nan=False)


@st.composite
def isometries(draw):
    g = geo.rotation(draw(angles), (draw(coords), draw(coords)))
    if draw(st.booleans()):
        g = geo.compose(REFLECT_X, g)
    return g


def test_compose_examples():
    g = geo.rotation(0.3, (1, 2))
    assert geo.isclose(geo.compose(IDENTITY, g), g)
    assert geo.isclose(geo.compose(ROT90, ROT90), geo.rotation(np.pi), 1e-15)
    assert geo.isclose(geo.compose(REFLECT_X, REFLECT_X), IDENTITY)


def test_apply_examples():
    np.testing.assert_allclose(geo.apply(IDENTITY, (0.3, 0.7)), (0.3, 0.7))
    np.testing.assert_allclose(geo.apply(geo.translation(1, 0), (0.25, 0.5)), (1.25, 0.5))
    np.testing.assert_allclose(geo.apply(geo.rotation(np.pi / 2, (0.5, 0.5)), (1, 0.5)), (0.5, 1.0), atol=1e-15)


def test_inverse_examples():
    assert geo.isclose(geo.inverse(IDENTITY), IDENTITY)
    assert geo.isclose(geo.inverse(geo.translation(1, 0)), geo.translation(-1, 0))
    assert geo.isclose(geo.inverse(ROT90), geo.rotation(3 * np.pi / 2), 1e-15)


@given(isometries())
def test_inverse_composes_to_identity(g):
    assert geo.isclose(geo.compose(g, geo.inverse(g)), IDENTITY, 1e-12)


@given(isometries(), isometries(), coords, coords)
def test_compose_matches_sequential_apply(a, b, x, y):
    np.testing.assert_allclose(geo.apply(geo.compose(a, b), (x, y)), geo.apply(a, geo.apply(b, (x, y))), atol=1e-12)


@given(isometries(), coords, coords, coords, coords)
def test_isometries_preserve_distance(g, x0, y0, x1, y1):
    p, q = np.array([x0, y0]), np.array([x1, y1])
    assert abs(np.linalg.norm(geo.apply(g, p) - geo.apply(g, q)) - np.linalg.norm(p - q)) < 1e-11


def test_non_orthogonal_rejected():
    with pytest.raises(ValueError):
        geo.Isometry2(np.array([[2.0, 0], [0, 1]]), (0, 0), 1)


def test_fixed_set_examples():
    fs = geo.fixed_set(geo.rotation(np.pi / 2, (0.5, 0.5)))
    assert fs.kind == "point"
    np.testing.assert_allclose(fs.point, (0.5, 0.5), atol=1e-15)
    fs = geo.fixed_set(REFLECT_X)
    assert fs.kind == "line" and fs.line.same_as(Line2((0, 0), (1, 0)))
    assert geo.fixed_set(geo.translation(1, 0)).kind == "none"
    assert geo.fixed_set(IDENTITY).kind == "all"
    assert geo.fixed_set(geo.glide(Line2((0, 0), (1, 0)), 0.5)).kind == "none"


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, np.pi))
def test_reflection_fixes_its_mirror(px, py, ang):
    line = Line2((px, py), (np.cos(ang), np.sin(ang)))
    fs = geo.fixed_set(geo.reflection(line))
    assert fs.kind == "line" and fs.line.same_as(line, 1e-9)


def test_segment_examples():
    assert geo.segments_properly_intersect(((0, 0), (1, 1)), ((0, 1), (1, 0)))
    assert not geo.segments_properly_intersect(((0, 0), (1, 0)), ((0, 1), (1, 1)))
    assert not geo.segments_properly_intersect(((0, 0), (1, 0)), ((1, 0), (2, 0)))
    assert geo.segments_properly_intersect(((0, 0), (2, 0)), ((1, 0), (3, 0)))     # collinear overlap
    assert geo.segments_properly_intersect(((0, 0), (2, 0)), ((1, 0), (1, 1)))     # T junction
    with pytest.raises(ValueError):
        geo.segments_properly_intersect(((0, 0), (0, 0)), ((0, 1), (1, 0)))


def test_polygon_is_simple_examples():
    assert geo.polygon_is_simple(UNIT_SQUARE)
    assert not geo.polygon_is_simple(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float))


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=3, max_size=9, unique=True))
def test_polygon_is_simple_matches_shapely(pts):
    poly = np.array(pts, dtype=float)
    ring = LinearRing(poly)
    expected = ring.is_simple and ring.is_valid
    assert geo.polygon_is_simple(poly) == expected == geo.polygon_is_simple_bruteforce(poly)


@pytest.mark.parametrize("group", ["O", "442", "3*3", "632"])
def test_solved_boundary_simple_against_bruteforce(group):
    for seed in range(3):
        mesh, _, tile = solved(group, 8, seed)
        poly = tile.positions[mesh.boundary]
        assert geo.polygon_is_simple(poly) and geo.polygon_is_simple_bruteforce(poly)
        assert LinearRing(poly).is_simple


def test_signed_area_examples():
    assert geo.signed_area((0, 0), (1, 0), (0, 1)) == 0.5
    assert geo.signed_area((0, 0), (0, 1), (1, 0)) == -0.5
    assert geo.signed_area((0, 0), (1, 1), (2, 2)) == 0.0


def test_point_in_polygon_examples():
    assert geo.point_in_polygon((0.5, 0.5), UNIT_SQUARE) == "inside"
    assert geo.point_in_polygon((2, 2), UNIT_SQUARE) == "outside"
    assert geo.point_in_polygon((1.0, 0.5), UNIT_SQUARE) == "boundary"
    with pytest.raises(ValueError):
        geo.point_in_polygon((0.5, 0.5), np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float))


def test_points_in_polygon_agrees_with_scalar(rng):
    poly = np.array([[0, 0], [2, 0], [2, 2], [1, 0.7], [0, 2]], dtype=float)
    pts = rng.uniform(-0.5, 2.5, size=(500, 2))
    vec = geo.points_in_polygon(pts, poly)
    scalar = np.array([geo.point_in_polygon(p, poly) == "inside" for p in pts])
    far = geo.distance_to_polyline(pts, poly) > 1e-9
    assert np.array_equal(vec[far], scalar[far])
