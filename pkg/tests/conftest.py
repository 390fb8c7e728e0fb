import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=100,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def worked_hour():
    """Three consumers, aggregate over-consumption, real-time price below day-ahead."""
    from pcpcoop.settlement import HourOutcome

    return HourOutcome([30.0, 30.0, 40.0], [40.0, 35.0, 35.0], 30.0, 20.0)


def pytest_terminal_summary(terminalreporter):
    from _acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
