"""Shared pytest wiring: prints one pass/fail line per acceptance criterion."""

import re

_ACCEPTANCE: dict[int, tuple[str, str]] = {}
_PATTERN = re.compile(r"test_acceptance\.py::.*test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    match = _PATTERN.search(report.nodeid)
    if not match:
        return
    num, label = int(match.group(1)), match.group(2)
    if report.when == "call" or (report.when == "setup" and report.skipped):
        outcome = "skipped" if report.skipped else report.outcome
        _ACCEPTANCE[num] = (label, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        label, outcome = _ACCEPTANCE[num]
        status = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
        terminalreporter.write_line(f"criterion {num:02d} [{status}] {label}")
