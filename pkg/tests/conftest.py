import time
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"
SUITE_BUDGET_S = 180.0

# Lines recorded by the acceptance tests, echoed in the terminal summary.
ACCEPTANCE_LINES = []
_START = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def data_dir():
    return DATA


def pytest_sessionstart(session):
    _START["t"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    elapsed = time.perf_counter() - _START.get("t", time.perf_counter())
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(f"{verdict} suite runtime: {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")
