import sys

import numpy as np
import pytest

from nomsim.operators import Operators
from nomsim.particles import build_supports, generate_grid, jitter


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid2d():
    """20 x 20 cell-centred grid on the unit square."""
    return generate_grid([[0.0, 1.0], [0.0, 1.0]], 0.05)


@pytest.fixture(scope="session")
def ops2d(grid2d):
    return Operators(grid2d, build_supports(grid2d, k=12))


@pytest.fixture(scope="session")
def ops2d_radius(grid2d):
    return Operators(grid2d, build_supports(grid2d, radius=2.01 * grid2d.spacing))


@pytest.fixture(scope="session")
def jittered2d(grid2d):
    return jitter(grid2d, 0.3 * grid2d.spacing, seed=7)


@pytest.fixture(scope="session")
def grid3d():
    return generate_grid([[0.0, 1.0]] * 3, 0.125)


@pytest.fixture(scope="session")
def ops3d(grid3d):
    return Operators(grid3d, build_supports(grid3d, k=26))


def interior(cloud, margin):
    """Indices at least ``margin`` away from the bounding box."""
    pos = cloud.positions
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    ok = np.all((pos >= lo + margin - 1e-12) & (pos <= hi - margin + 1e-12), axis=1)
    return np.flatnonzero(ok)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key, (ok, detail) in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
