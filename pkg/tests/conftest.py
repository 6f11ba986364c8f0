import pytest

ACCEPTANCE_LINES: list = []


@pytest.fixture
def report_line():
    """Record one acceptance verdict line for the terminal summary."""
    def _add(line):
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
