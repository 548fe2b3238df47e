import numpy as np
import pytest

from polylife.models import (
    CALIBRATED,
    calibrated_market,
    hedge_demo_market,
    jacobi_spec,
)


@pytest.fixture(scope="session")
def cal_params():
    return dict(CALIBRATED)


@pytest.fixture(scope="session")
def jacobi1d(cal_params):
    """The calibrated one-dimensional Jacobi factor."""
    return jacobi_spec(cal_params["psi"], cal_params["b"], cal_params["sigma"])


@pytest.fixture(scope="session")
def cal_market():
    """Calibrated two-factor market on the horizon-1 working box."""
    model, report = calibrated_market(horizon=1.0)
    return model


@pytest.fixture(scope="session")
def cal_report():
    model, report = calibrated_market(horizon=1.0)
    return report


@pytest.fixture(scope="session")
def hedge_market():
    """Two-noise hedging test market (square hedge matrix)."""
    model, report = hedge_demo_market(horizon=1.0)
    return model


@pytest.fixture(scope="session")
def z0(cal_market):
    return np.array(cal_market.spec.z0)
