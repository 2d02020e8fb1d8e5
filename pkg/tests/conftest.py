import math

import pytest
from hypothesis import HealthCheck, settings

from mmwave_ia.core import Exponential, LosBall, SystemConfig

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TABLE_MODELS = (LosBall(100.0, 1.0), LosBall(100.0, 0.75), LosBall(100.0, 0.5),
                LosBall(100.0, 0.25), Exponential(100.0), Exponential(50.0),
                Exponential(25.0))


@pytest.fixture(scope="session")
def cfg():
    return SystemConfig()


def db(x):
    return 10.0 ** (x / 10.0)


def rad(deg):
    return deg * math.pi / 180.0


ACCEPTANCE_LINES = []


def record(criterion, passed, detail=""):
    """Note the outcome of one acceptance criterion for the end-of-run summary."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f" | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
