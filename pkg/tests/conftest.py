import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import brute_force_ce_tables  # noqa: E402


def random_elite(rng, sizes, n_obs, n_actions, max_traj=5, max_t=4):
    n = rng.integers(1, max_traj + 1)
    T = rng.integers(1, max_t + 1)
    elite = []
    for _ in range(n):
        d = rng.integers(0, n_actions, T).tolist()
        y = rng.integers(0, n_obs, T).tolist()
        m = [tuple(int(rng.integers(0, s)) for s in sizes) for _ in range(T)]
        elite.append((d, y, m))
    return elite


def stack_elite(elite):
    return (np.array([e[0] for e in elite]), np.array([e[1] for e in elite]),
            np.array([e[2] for e in elite]))


@pytest.fixture
def ce_oracle():
    return brute_force_ce_tables


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
