import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bnngp.kernels import HyperParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_theta(rng, lo=0.3, hi=2.0) -> HyperParams:
    return HyperParams(*rng.uniform(lo, hi, 5), *rng.uniform(0.1, 0.9, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_theta():
    return HyperParams()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
