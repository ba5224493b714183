import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from helpers import ACCEPTANCE_LINES

from epirefine import synth

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class Scene:
    """A rendered pair with its feature pyramids, built once per session."""

    def __init__(self, pair):
        self.pair = pair
        self.tp, self.sp = pair.pyramids()
        self.K = pair.K_working

    def __getattr__(self, name):
        return getattr(self.pair, name)


@pytest.fixture(scope="session")
def acceptance():
    return Scene(synth.acceptance_pair())


@pytest.fixture(scope="session")
def alignment():
    return Scene(synth.alignment_pair())


@pytest.fixture(scope="session")
def shift():
    return Scene(synth.shift_pair())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
