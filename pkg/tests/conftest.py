import pytest

ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    """Store the verdict line for one acceptance criterion and echo it."""
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
