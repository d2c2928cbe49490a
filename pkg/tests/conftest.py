"""Shared fixtures: convergence studies are expensive, so each is computed
once per session and reused by the module tests and the acceptance tests."""
import warnings

import numpy as np
import pytest

from trimshell import benchmarks as B
from trimshell import verification as V

ACCEPTANCE_LINES = []


def record_acceptance(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _study(name, n_list, p_list, alpha=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return V.run_study(B.get_benchmark(name), n_list, p_list, alpha=alpha)


@pytest.fixture(scope="session")
def flat_study():
    """Flat shell, n in {4, 8, 16, 32}, p in {3, 4}, alpha = 0.4."""
    return _study("flat_shell", [4, 8, 16, 32], [3, 4])


@pytest.fixture(scope="session")
def circular_study():
    """Circular shell, n in {4, 8, 16, 32}, p in {3, 4, 5}, alpha = 0.4."""
    return _study("circular", [4, 8, 16, 32], [3, 4, 5])


@pytest.fixture(scope="session")
def scordelis_study():
    """Scordelis-Lo, n in {6, 10, 20, 40}, p in {3, 4}, alpha = 0.6."""
    return _study("scordelis_lo", [6, 10, 20, 40], [3, 4])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def quadrature_orders():
    """Disk area/circumference convergence orders, p in {3, 4, 5}, n in {16, 32, 64}."""
    return V.quadrature_selftest()


@pytest.fixture(scope="session")
def untrimmed_conditions():
    """Condition estimates of the untrimmed flat shell, p = 3, n in {4, 8, 16, 32}."""
    from trimshell.assembly import solve

    out = {}
    for n in (4, 8, 16, 32):
        sol = solve(B.untrimmed_flat_shell(n, 3).problem, alpha=0.4)
        out[n] = sol.report.cond_est
    return out
