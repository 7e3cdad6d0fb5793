import pytest

from vpsim.experiments import find_base_gait

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def base():
    return find_base_gait()


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
