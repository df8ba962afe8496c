import numpy as np
import pytest

from escher_tile.tilesolve import TileParams, solve_tile
from escher_tile.wallpaper import build_tile


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def solved(group: str, n: int, seed: int, scale: float = 1.0, random_phi: bool = True):
    """Solve ``group`` at ``n`` for theta ~ N(0, scale^2) drawn from ``seed``."""
    mesh, cs = build_tile(group, n)
    params = TileParams.random(mesh, np.random.default_rng(seed), scale=scale, random_phi=random_phi)
    return mesh, cs, solve_tile(mesh, cs, params)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
