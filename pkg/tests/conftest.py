import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scatterdense.filters import build_bank

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def bank16():
    return build_bank(J=2, L=4, slant=0.5, H=16, W=16)


@pytest.fixture(scope="session")
def bank32():
    return build_bank(J=3, L=8, slant=0.5, H=32, W=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
