import numpy as np
import pytest

from ldmatrix import ensemble as E
from ldmatrix.grid import build_grid
from ldmatrix.spectral import profile_at

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def e3():
    return E.e3()


@pytest.fixture(scope="session")
def e3_grid(e3):
    return build_grid(e3, resolution=2048)


@pytest.fixture(scope="session")
def e3_profile(e3, e3_grid):
    return profile_at(e3, 1.0, e3_grid)


@pytest.fixture(scope="session")
def lognormal():
    return E.lognormal_scalar()


@pytest.fixture(scope="session")
def lognormal_profile(lognormal):
    return profile_at(lognormal, 1.0, build_grid(lognormal))


@pytest.fixture(scope="session")
def two_point():
    return E.two_point()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
