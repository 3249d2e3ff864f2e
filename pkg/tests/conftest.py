from pathlib import Path

import pytest

from rbac_kernel import parse_policy_file

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def hospital():
    return parse_policy_file(FIXTURES / "hospital.rbac")


@pytest.fixture
def bank():
    return parse_policy_file(FIXTURES / "bank.rbac")


@pytest.fixture
def bank_static():
    return parse_policy_file(FIXTURES / "bank-static.rbac")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        title, ok, detail = RESULTS[number]
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
