import numpy as np
import pytest

from tqsreg.regress import RegressorConfig

# populated by the acceptance suite; echoed after the run so the
# criterion verdicts are visible regardless of output capturing
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def krr_cfg():
    return RegressorConfig("kernel_ridge")


@pytest.fixture
def trees_cfg():
    return RegressorConfig("boosted_trees")


@pytest.fixture
def spline_cfg():
    return RegressorConfig("spline_gam")
