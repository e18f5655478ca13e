import numpy as np
import pytest

from skewprod import base, models

# (1/0.4) * int_{0.2}^{0.6} log a da, by scipy.integrate.quad
MEAN_LOG_A = -0.9615194794319357


@pytest.fixture(scope="session")
def affine_random():
    return models.build("affine_random")


@pytest.fixture(scope="session")
def identity_model():
    return models.build("identity")


@pytest.fixture(scope="session")
def two_branch():
    return models.build("two_branch")


@pytest.fixture(scope="session")
def pinched():
    return models.build("pinched_sna")


@pytest.fixture
def uniform_spec():
    return base.bernoulli(base.Uniform(0.2, 0.6))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
