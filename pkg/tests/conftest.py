import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from weakcorr.model import CondensateParams
from weakcorr.simulator import Grid, PhysicsConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_config():
    """Short cloud on a small grid; cheap enough for Monte-Carlo tests."""
    cond = CondensateParams(atom_number=5e4, tf_radius_x=20e-6, tf_radius_z=3e-6, temperature=20e-9)
    return PhysicsConfig(condensate=cond, grid=Grid(nx=128, ny=16, pitch=0.5e-6))


@pytest.fixture(scope="session")
def cold_config():
    cond = CondensateParams(atom_number=5e4, tf_radius_x=20e-6, tf_radius_z=3e-6, temperature=0.0)
    return PhysicsConfig(condensate=cond, grid=Grid(nx=128, ny=16, pitch=0.5e-6))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
