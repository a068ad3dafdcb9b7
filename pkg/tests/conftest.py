import sys

import pytest

# one line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA_LINES = {}


def report(k: int, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    CRITERIA_LINES[k] = line
    print(line, file=sys.__stdout__, flush=True)
    return ok


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[k])
