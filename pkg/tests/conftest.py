import numpy as np
import pytest

from mintime.problem import get_problem
from mintime.sip import solve


@pytest.fixture(scope="session")
def line1d_report():
    return solve(get_problem("line1d"), 2, n_samples=100_000, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def record_criterion(request):
    """Record one PASS/FAIL line, echoed in the terminal summary."""
    def record(label, checks):
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name}{'' if good else ' [FAILED]'}: {info}"
                           for name, good, info in checks)
        line = f"{'PASS' if ok else 'FAIL'}  {label}  ({detail})"
        request.config._acceptance_lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
