import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hartlab import DyadicParams, build_system, grid1d

settings.register_profile("hartlab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hartlab")

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def line256():
    return grid1d(256)


@pytest.fixture(scope="session")
def standard256(line256):
    return build_system(line256, DyadicParams(), 0)


@pytest.fixture
def two_point():
    """The hand scenario: points 0.25, 0.75, kernel 2 / -2, u = (1, 4), v = (9, 1)."""
    from hartlab.operators import OperatorMatrix
    space = grid1d(2)
    m = OperatorMatrix.from_entries(space, [[0.0, 2.0], [-2.0, 0.0]])
    return space, m, np.array([1.0, 4.0]), np.array([9.0, 1.0])
