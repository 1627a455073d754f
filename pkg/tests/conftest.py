import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mdplab import catalog

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).resolve().parent.parent / "data"

# frozen reference values (derived by hand or by independent oracles)
KL_THIRDS = math.log(2) / 3                  # kl(1/3, 2/3)
HALF_LOG43 = 0.5 * math.log(4 / 3)           # KL((1/2,1/2) || (3/4,1/4))
U_CYCLE = 0.12981025188856493                # U(cycle, mu = (1, 1)) on the two-state model
MU_STAR = 7.70355180312296                   # mu*(s1->s2) = mu*(s2->s1)
LB_TWO_STATE = 2.5678506010409867
BANDIT_05_09 = 0.4 / (0.5 * math.log(25 / 9))
INV_LN2 = 1 / math.log(2)
MU_NO_NAV = 1 / KL_THIRDS


@pytest.fixture
def two_state():
    return catalog.two_state()


@pytest.fixture
def two_state_policies(two_state):
    return catalog.two_state_policies(two_state)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail = RESULTS[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k:2d}: {detail}")
