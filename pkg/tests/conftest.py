import pytest

import support
from support import rossi_columns, rossi_path


@pytest.fixture(scope="session")
def rossi_file():
    return rossi_path()


@pytest.fixture(scope="session")
def rossi():
    return rossi_columns()


def pytest_terminal_summary(terminalreporter):
    if support.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(support.ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
