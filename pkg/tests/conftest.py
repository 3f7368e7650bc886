import numpy as np
import pytest

from arto.config import DATA_DIR, Config
from arto.problem import PlanningProblem


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cfg():
    return Config.load(DATA_DIR / "default.cfg")


@pytest.fixture(scope="session")
def problem():
    """Library defaults."""
    return PlanningProblem()


@pytest.fixture(scope="session")
def exp_problem(cfg):
    """The calibrated problem used by the experiments."""
    return cfg.problem()


# one verdict line per acceptance criterion, repeated at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
