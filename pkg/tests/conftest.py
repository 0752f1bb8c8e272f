import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from catqueue.rates import constant_model, example1_model, example2_model

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ex1():
    return example1_model()


@pytest.fixture(scope="session")
def ex2():
    return example2_model()


@pytest.fixture(scope="session")
def unit_model():
    return constant_model(lam=1.0, mu=1.0, eta=1.0, gamma=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
