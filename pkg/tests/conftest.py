import sys

import pytest

from rydarray.lattice import TrapArray


@pytest.fixture
def array7():
    return TrapArray(rows=19, cols=19, pitch=7.0)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
