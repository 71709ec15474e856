from __future__ import annotations

import numpy as np
import pytest

from onlineselect.engine import simulate
from onlineselect.strategies import SelfSimilar, Stationary

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def optimal_1e5():
    """SelfSimilar optimal-expansion ensemble, nu = 1e5, 1e4 replicates."""
    grid = np.linspace(0, 1, 5)
    return simulate(SelfSimilar(1e5), 10_000, seed=5, grid=grid, keep_paths=True)


@pytest.fixture(scope="session")
def optimal_1e4():
    return simulate(SelfSimilar(1e4), 10_000, seed=3, grid=np.linspace(0, 1, 101), keep_paths=False)


@pytest.fixture(scope="session")
def stationary_1e4():
    return simulate(Stationary(1e4), 10_000, seed=7, grid=np.linspace(0, 1, 101), keep_paths=False)
