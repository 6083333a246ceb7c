import math

import pytest

from qdetect.geometry import ChangeOfVariables
from qdetect.model import DiffusionModel, PenaltySpec, Prior

SQRT2 = math.sqrt(2.0)


@pytest.fixture
def const_model():
    # rho = 2 everywhere, so the boundary weight W is identically 1
    return DiffusionModel.eta_sigmoid(0.0, 1.0, SQRT2, SQRT2, 1.0)


@pytest.fixture
def rising_model():
    return DiffusionModel.eta_sigmoid(0.0, 1.0, 0.7, 1.6, 1.0)


@pytest.fixture
def const_cov(const_model):
    return ChangeOfVariables.of(const_model)


@pytest.fixture
def rising_cov(rising_model):
    return ChangeOfVariables.of(rising_model)


@pytest.fixture
def prior0():
    return Prior(0.0, 1.0)


@pytest.fixture
def linear_pen():
    return PenaltySpec.linear(1.0)


@pytest.fixture
def exp_pen():
    return PenaltySpec.exponential(1.0, 1.0)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
