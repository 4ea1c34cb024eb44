import math

import numpy as np
import pytest
from hypothesis import settings

from spinflip.model import LaserParams

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def p():
    return LaserParams()


@pytest.fixture(scope="session")
def uhat45(p):
    return math.sqrt(p.mu - 1) * np.array([math.cos(math.pi / 4), math.sin(math.pi / 4)], dtype=complex)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
