import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rsjd import zoo

settings.register_profile(
    "rsjd", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("rsjd")


def within(est, target, z=3.0, slack=0.0):
    """``|est - target| <= z SE + bias bound + slack``."""
    return abs(est.value - target) <= z * est.se + est.bias_bound + slack


@pytest.fixture(scope="session")
def bench():
    return zoo.two_regime_benchmark()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
