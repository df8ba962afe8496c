import numpy as np
import pytest

from escher_tile import geometry as geo
from escher_tile.validity import (check_boundary_conditions, check_boundary_simple, check_orientation,
                                  check_tiling_coverage, full_report)
from escher_tile.wallpaper import INTERESTING_GROUPS, REFLECTION_GROUPS, build_tile

from conftest import solved


def test_canonical_placement_satisfies_constraints():
    for group in ("O", "442", "*632", "3*3"):
        mesh, cs = build_tile(group, 6)
        assert check_boundary_conditions(mesh.vertices, cs) <= 1e-12


@pytest.mark.parametrize("group", ["O", "22x", "632"])
def test_solved_residual_small(group):
    mesh, cs, tile = solved(group, 8, 0)
    assert check_boundary_conditions(tile, cs) <= 1e-8


def test_displaced_boundary_vertex_detected():
    mesh, cs, tile = solved("O", 8, 1)
    pos = tile.canonical_positions.copy()
    v = int(mesh.boundary[3])
    pos[v] += (0.01, 0.0)
    assert check_boundary_conditions(pos, cs) >= 0.01 - 1e-12


def test_orientation_examples():
    mesh, _ = build_tile("O", 4)
    assert check_orientation(mesh.vertices, mesh) == 0
    pos = mesh.vertices.copy()
    a, b = mesh.grid_index(1, 1), mesh.grid_index(2, 2)
    pos[[a, b]] = pos[[b, a]]
    assert check_orientation(pos, mesh) > 0


def test_boundary_simple_detects_crossing():
    mesh, _ = build_tile("O", 4)
    pos = mesh.vertices.copy()
    pos[mesh.grid_index(2, 0)] = (2.0, 2.0)
    assert check_boundary_simple(mesh.vertices, mesh)
    assert not check_boundary_simple(pos, mesh)


def test_canonical_square_coverage_exact():
    mesh, _ = build_tile("O", 4)
    stats = check_tiling_coverage(mesh.vertices, mesh, "O", num_samples=10_000, seed=0)
    assert stats.exact and stats.mean == 1.0


def test_random_2222_coverage_exact():
    mesh, _, tile = solved("2222", 8, 4)
    stats = check_tiling_coverage(tile, mesh, "2222", num_samples=10_000, seed=1)
    assert (stats.mean, stats.min, stats.max) == (1.0, 1, 1)


def test_corrupted_generators_overlap():
    mesh, _ = build_tile("O", 4)
    gens = [geo.translation(0.5, 0.0), geo.translation(0.0, 1.0)]
    stats = check_tiling_coverage(mesh.vertices, mesh, "O", num_samples=2000, generators=gens)
    assert stats.max >= 2


@pytest.mark.parametrize("group", INTERESTING_GROUPS)
def test_full_report_random_theta(group):
    mesh, cs, tile = solved(group, 8, 11)
    assert full_report(tile, mesh, cs).passed


def test_full_report_corrupted_positions():
    mesh, cs, tile = solved("442", 8, 2)
    pos = tile.canonical_positions.copy()
    pos[mesh.grid_index(4, 4)] = pos[mesh.grid_index(1, 1)] + (0.0, -0.5)
    report = full_report(pos, mesh, cs)
    assert not report.passed and report.inverted_triangle_count > 0
    assert "FAIL" in report.summary()
    assert report.to_dict()["passed"] is False


@pytest.mark.parametrize("group", REFLECTION_GROUPS)
def test_reflection_group_tiles_pass(group):
    mesh, cs, tile = solved(group, 6, 0)
    report = full_report(tile, mesh, cs)
    assert report.passed and report.boundary_residual_max <= 1e-12
