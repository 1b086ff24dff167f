import numpy as np
import pytest

from layerscat.geometry import builtin_geometry
from layerscat.modes import ModeSet

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}: {name} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ball():
    return builtin_geometry("ball")


@pytest.fixture(scope="session")
def ball_modes(ball):
    return ModeSet(5.85, 0.0, 4, 30, ball.default_h())
