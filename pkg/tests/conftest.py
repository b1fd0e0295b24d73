"""Shared test plumbing.

The acceptance tests push one verdict line each into a registry; the hook
below prints the collected lines after the run so they show up in the
terminal even when pytest captures per-test stdout.
"""

import pytest

_CRITERION_LINES: list[str] = []


@pytest.fixture
def criterion_report():
    def _report(line: str) -> None:
        print(line)
        _CRITERION_LINES.append(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)
