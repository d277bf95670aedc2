import pytest

from rbdsde import RegressionConfig, generate_paths
from rbdsde.scenarios import stopping_drift_scenario


@pytest.fixture(scope="session")
def fast_cfg():
    """Regression setup used by the obstacle tests: g = 0 there, so the
    backward-increment columns would be pure noise regressors."""
    return RegressionConfig(degree_w=5, include_dB=False)


@pytest.fixture(scope="session")
def binding_problem():
    """Stopping scenario with a running cost: the obstacle genuinely binds
    (mean K_T close to 0.66), shared by several structural tests."""
    sc = stopping_drift_scenario(paths=20_000, steps=50, seed=42)
    return sc, generate_paths(sc)
