"""Shared pytest config: the acceptance-gate verdict printer.

Tests marked ``@pytest.mark.acceptance("<criterion>")`` feed a summary
section at the end of the run with one line per criterion:

    [acceptance] PASS <criterion>

Several tests may share a criterion; the worst individual outcome wins
(FAIL over SKIP over PASS).
"""

import pytest

_SEVERITY = {"PASS": 0, "SKIP": 1, "FAIL": 2}
_verdicts: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(criterion): this test checks the named gate criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.failed:
        verdict = "FAIL"
    elif report.skipped:
        verdict = "SKIP"
    elif report.when == "call" and report.passed:
        verdict = "PASS"
    else:
        return
    criterion = marker.args[0]
    if _SEVERITY[verdict] >= _SEVERITY.get(_verdicts.get(criterion, "PASS"), 0):
        _verdicts[criterion] = verdict


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _verdicts:
        return
    terminalreporter.section("acceptance gate")
    for criterion, verdict in _verdicts.items():
        terminalreporter.write_line(f"[acceptance] {verdict} {criterion}")
