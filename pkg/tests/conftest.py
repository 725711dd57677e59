import os

# every exit_time call cross-checks the closed form against quadrature
os.environ.setdefault("PAIRSIRS_VERIFY_EXITS", "1")

import numpy as np
import pytest

from pairsirs.model import Params


@pytest.fixture
def p_std():
    return Params(beta=2.0, gamma=1.0, epsilon=0.0, n=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
