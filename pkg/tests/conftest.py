import numpy as np
import pytest

from greenlearn.grid import make_tensor_grid, make_uniform_grid

ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.acceptance_lines = ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").lstrip("#"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def line_grid():
    return make_uniform_grid((0.0, 1.0), 9)


@pytest.fixture
def st_grid():
    return make_tensor_grid([make_uniform_grid((0.0, 1.0), 5), make_uniform_grid((0.0, 1.0), 4)])
