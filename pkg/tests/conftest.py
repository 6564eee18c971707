import pytest

from spekl.cases import CASES
from spekl.layout import Layout, Placement, SlotUniform


@pytest.fixture(scope="session")
def sigma6():
    return CASES["sigma6"].system()


@pytest.fixture(scope="session")
def msg_checked():
    return CASES["msgpassing_checked"].system()


@pytest.fixture(scope="session")
def msg_unchecked():
    return CASES["msgpassing"].system()


@pytest.fixture(scope="session")
def sigma6_layouts(sigma6):
    return [lay for lay, _ in SlotUniform(2).enumerate(sigma6)]


@pytest.fixture
def sigma6_pl(sigma6):
    return Placement(sigma6, Layout({"fn": 8, "nop": 10, "a": 12}))


# acceptance lines, repeated at the end of the run so they survive output capture
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
