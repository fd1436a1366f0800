import numpy as np
import pytest

from qmri.bloch import PulseSequence


@pytest.fixture
def seq10():
    return PulseSequence.constant(10, np.deg2rad(40.0), 40.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_collection_modifyitems(config, items):
    for item in items:
        if "acceptance" in item.nodeid:
            item.add_marker(pytest.mark.acceptance)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = (mark.args[0], mark.args[1])
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        prev = _outcomes.get(key, "PASS")
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        _outcomes[key] = "FAIL" if "FAIL" in (prev, status) else status


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), status in sorted(_outcomes.items()):
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")
