import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ncsopt import CostSpec, DelayChain, InitSpec, PlantModel, ProblemSpec

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MIXING_R = [[0.6, 0.4], [0.5, 0.5]]
MIXING_D = [[0.7, 0.3], [0.2, 0.8]]


def make_spec(A, B, *, Q=None, Q_bar=None, R=None, k0=0, N=3, r_chain=None, d_chain=None,
              x0=None, r0=None, d_init=None, pre=None):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    n, m = B.shape
    Q = np.eye(n) if Q is None else Q
    Q_bar = np.eye(n) if Q_bar is None else Q_bar
    R = np.eye(m) if R is None else R
    r_chain = r_chain or DelayChain.constant(0)
    d_chain = d_chain or DelayChain.constant(0)
    init = InitSpec(np.ones(n) if x0 is None else x0,
                    r_chain.lo if r0 is None else r0,
                    d_chain.lo if d_init is None else d_init, pre)
    return ProblemSpec(PlantModel(A, B), CostSpec(Q, Q_bar, R, k0, N), r_chain, d_chain, init)


@pytest.fixture
def mixing_spec():
    rng = np.random.default_rng(5)
    return make_spec([[1.1, 0.2], [0.0, 0.9]], [[0.0], [1.0]], Q_bar=2 * np.eye(2),
                     r_chain=DelayChain(0, 1, MIXING_R), d_chain=DelayChain(0, 1, MIXING_D),
                     x0=[1.0, -0.5], r0=1, d_init=1, pre=rng.normal(size=(2, 2)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
