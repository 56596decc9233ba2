import sys

import pytest

from arw1d import _engine


@pytest.fixture(scope="session", autouse=True)
def warm_engine():
    # compile the numba kernels once so per-test timings are honest
    _engine.warmup()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
