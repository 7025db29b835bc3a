import os

import numpy as np
import pytest

from infravac.infravacuum import make_kpr_config
from infravac.localization import ConeSpec, build_u_c
from infravac.modespace import AngularTruncation, geometric_boundaries, make_grid

# every stochastic test derives its generator from this seed
SEED = int(os.environ.get("INFRAVAC_SEED", "0"))

ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture(scope="session")
def kpr():
    """Default KPR config capped at l = 8 for general mode functions."""
    return make_kpr_config(l_cap=8)


@pytest.fixture(scope="session")
def kpr_cone():
    """Default KPR config with the uncapped rule l <= i."""
    return make_kpr_config()


@pytest.fixture(scope="session")
def grid(kpr):
    return make_grid(kpr.shell_boundaries, 24, 128.0)


@pytest.fixture(scope="session")
def trunc8():
    return AngularTruncation(8)


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(geometric_boundaries(1.0, 0.5, 6), 8, 16.0)


@pytest.fixture(scope="session")
def cone():
    return ConeSpec()


@pytest.fixture(scope="session")
def pipeline(cone, grid):
    return build_u_c(cone, 1.0, 1.0, 2.0, grid)


@pytest.fixture(scope="session")
def control_pipeline(cone, grid):
    return build_u_c(cone, 1.0, 1.0, 2.0, grid, control=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
