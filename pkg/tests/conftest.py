from __future__ import annotations

import numpy as np
import pytest

from hmcert.certify import fit_drift, fit_minorization, hm_constants
from hmcert.models import generate
from hmcert.statespace import Kernel, Lyapunov

TWO_STATE_P = np.array([[0.9, 0.1], [0.2, 0.8]])

# Outcome lines of the acceptance suite, printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def one_step(family, V, R=None, **kw):
    drift = fit_drift(family, V)
    minor = fit_minorization(family, V, drift, R)
    return drift, minor, hm_constants(drift, minor, **kw)


@pytest.fixture
def two_state_kernel():
    return Kernel(TWO_STATE_P)


@pytest.fixture
def two_state_V():
    return Lyapunov([0.0, 1.0])


@pytest.fixture(scope="session")
def two_state_gen():
    return generate("two_state", {})


@pytest.fixture(scope="session")
def rotation_gen():
    return generate("rotation", {})


@pytest.fixture(scope="session")
def random_gen():
    return generate("random_minorized", {"n": 6, "seed": 1})


@pytest.fixture(scope="session")
def linear_gen():
    return generate("linear", {"theta": [0.3, 0.4, 0.5, 0.6], "points": 101, "noise": "lattice",
                              "half_width": 3.0, "max_deviation": None})


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
