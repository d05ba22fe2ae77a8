"""Shared pytest wiring: one summary line per acceptance criterion.

Tests tag themselves with ``@pytest.mark.criterion(number, description)``;
after the run the terminal summary prints ``criterion N (description):
PASS`` or ``FAIL``. A criterion realized by several tests passes only if
all of them pass; setup errors and skips count as failures because an
acceptance check that did not run proves nothing.
"""

import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(number, description): acceptance criterion this test realizes")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = (marker.args[0], marker.args[1])
    if report.when == "call":
        _results[key] = _results.get(key, True) and report.passed
    elif not report.passed:
        _results[key] = False


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number, description in sorted(_results):
        verdict = "PASS" if _results[(number, description)] else "FAIL"
        terminalreporter.write_line(f"criterion {number} ({description}): {verdict}")
