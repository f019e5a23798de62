import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from driftio.allocation import LINEAR_PENALTY, QUADRATIC_FAIRNESS, CostFamily

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def qf(lam=0.0):
    return CostFamily(QUADRATIC_FAIRNESS, fairness_weight=lam)


def lp(gamma=0.0, coeffs=(0.0,), rho=1e-3, clears=None):
    return CostFamily(LINEAR_PENALTY, penalty_weight=gamma, penalty_coeffs=coeffs,
                      regularization=rho, clears_capacity=clears)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
