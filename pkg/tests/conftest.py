import numpy as np
import pytest

from wmlab.grid import Grid1D

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def g64():
    return Grid1D(64)


@pytest.fixture(scope="session")
def g128():
    return Grid1D(128)


@pytest.fixture(scope="session")
def g256():
    return Grid1D(256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
