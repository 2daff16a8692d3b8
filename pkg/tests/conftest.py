import sys

import numpy as np
import pytest

from mclab.model import DiscreteMeasure, Interval, InversePower


@pytest.fixture
def interval():
    return Interval()


@pytest.fixture
def inv():
    return InversePower(1.0)


@pytest.fixture
def mu3(interval):
    return DiscreteMeasure(interval, [0.0, 0.3, 1.0], [0.2, 0.3, 0.5])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = getattr(sys.modules.get("test_acceptance"), "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
