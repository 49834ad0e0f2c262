from __future__ import annotations

import pytest

from sepspike import acceptance

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_settings() -> acceptance.Settings:
    return acceptance.Settings(tier="paper", seed=0)


@pytest.fixture
def record_criterion():
    def record(result: acceptance.CriterionResult) -> None:
        ACCEPTANCE_LINES.append(result.line())
        print(result.line())

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
