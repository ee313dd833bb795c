import numpy as np
import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion(request):
    """Store one acceptance outcome; all outcomes are printed in the terminal summary."""
    results = request.config.stash[_RESULTS]

    def record(number, title, passed, detail=""):
        results[number] = (title, bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"CRITERION {number} {status}: {title}. {detail}")
