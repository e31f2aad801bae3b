import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.differing_executors])
settings.load_profile("repo")

from elastohom.cascade import CascadeContext  # noqa: E402
from elastohom.coefficients import isotropic_constant, isotropic_modulated  # noqa: E402
from elastohom.fiber import SolverConfig  # noqa: E402
from elastohom.grid import CellGrid  # noqa: E402


@pytest.fixture(scope="session")
def grid8():
    return CellGrid(8)


@pytest.fixture(scope="session")
def tight():
    return SolverConfig(cg_tol=1e-12)


@pytest.fixture(scope="session")
def modulated8(grid8):
    return isotropic_modulated(grid8, 1.0, 1.0, 0.3)


@pytest.fixture(scope="session")
def ctx8(modulated8, tight):
    return CascadeContext(modulated8, tight)


@pytest.fixture(scope="session")
def const_ctx8(grid8, tight):
    return CascadeContext(isotropic_constant(grid8, 1.0, 1.0), tight)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 11):
        if k in RESULTS:
            ok, detail = RESULTS[k]
            terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")
        else:
            terminalreporter.write_line(f"criterion {k}: FAIL (not run)")
