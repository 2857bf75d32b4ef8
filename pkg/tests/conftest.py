import numpy as np
import pytest

ACCEPTANCE_RESULTS = []


def record_criterion(name, passed, detail=""):
    """Collect one acceptance line; also echo it immediately."""
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
