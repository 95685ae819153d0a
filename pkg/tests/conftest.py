"""Acceptance-gate reporting: one PASS/FAIL line per criterion at the end of the run."""

import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    criterion = item.get_closest_marker("criterion")
    if criterion is None:
        return
    number, title = criterion.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        measured = dict(item.user_properties).get("measured", "")
        _RESULTS[number] = (title, report.outcome, measured)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, outcome, measured = _RESULTS[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number:2d} {verdict}  {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
