from __future__ import annotations

import pytest

from slicenego.twin import SystemConstants


@pytest.fixture
def small_consts() -> SystemConstants:
    return SystemConstants(n_mc=2000)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
