import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tdbem.assembly import QuadratureConfig, assemble_operator  # noqa: E402
from tdbem.mesh import build_icosphere, build_square_screen  # noqa: E402
from tdbem.timebasis import TimeGrid  # noqa: E402


@pytest.fixture(scope="session")
def square2():
    return build_square_screen(2)


@pytest.fixture(scope="session")
def square2_operator(square2):
    grid = TimeGrid(0.25, 12)
    return grid, assemble_operator(square2, grid, QuadratureConfig(tol=1e-8, near_depth=12))


@pytest.fixture(scope="session")
def ico0_operator():
    mesh = build_icosphere(0)
    grid = TimeGrid(0.5, 10)
    return mesh, grid, assemble_operator(mesh, grid, QuadratureConfig(tol=1e-8, near_depth=12))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
