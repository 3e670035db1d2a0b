import pytest
from hypothesis import HealthCheck, settings

from ctms_station.ctm import FixedParams
from helpers import uniform_stretch

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def fixed():
    return FixedParams()


@pytest.fixture
def small_stretch():
    return uniform_stretch()


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
