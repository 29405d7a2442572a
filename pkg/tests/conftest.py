import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Pass/fail lines recorded by the acceptance suite, echoed after the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
