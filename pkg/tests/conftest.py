import numpy as np
import pytest

from dldnet.flow_oracle import solve_steady
from dldnet.geometry import make_cell


@pytest.fixture(scope="session")
def cell_0510():
    return make_cell(0.5, 10)


@pytest.fixture(scope="session")
def field_0510(cell_0510):
    """Oracle field at the default 256 grid (about 15 s)."""
    return solve_steady(cell_0510)


@pytest.fixture(scope="session")
def coarse_field(cell_0510):
    return solve_steady(cell_0510, nx=96, ny=96)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
