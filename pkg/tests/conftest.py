import pytest

from ringbft.core import KeyedTagScheme, SystemConfig
from ringbft.host import NullHost


@pytest.fixture
def scheme():
    return KeyedTagScheme(seed=b"test")


@pytest.fixture
def cfg6():
    return SystemConfig.ring(6)


@pytest.fixture
def host():
    return NullHost()


def pytest_terminal_summary(terminalreporter):
    import sys

    verdicts = getattr(sys.modules.get("test_acceptance"), "VERDICTS", {})
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for num in sorted(verdicts):
            terminalreporter.write_line(verdicts[num])
