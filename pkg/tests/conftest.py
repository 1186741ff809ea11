import pytest
from hypothesis import HealthCheck, settings

from kslab.core import Grid

from helpers import ACCEPTANCE_LINES, gaussian

settings.register_profile("kslab", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kslab")


@pytest.fixture
def grid64():
    return Grid(2.0, 64)


@pytest.fixture
def blob(grid64):
    return gaussian(grid64, 0.3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
