"""Tabular Q-learning baseline on the pursuit benchmark.

The agent knows the last observation and the pursuers' full poses.  A state
is packed into one integer in this order, most significant first:

    y (16) | B cell (W*H) | C cell (W*H) | B heading (4) | C heading (4)

with ``cell = j * W + i``.  Training is a single continuing run with
epsilon-greedy exploration, ``epsilon_t = 1 / ln t`` (1 while ``t < 3``).
Greedy ties go to the lowest action index.
"""
from __future__ import annotations

import logging
import math
import random
import struct
from dataclasses import dataclass, field

import numpy as np

from .grid_world import Case, Scenario

log = logging.getLogger(__name__)

PACK_PURSUIT = 1
PACK_CHASE = 2
_MAGIC = b"HHMMQTAB"
_VERSION = 1
_HEADER = struct.Struct("<8sIIIIQQ")


class MemoryBudgetError(RuntimeError):
    pass


class SnapshotError(ValueError):
    pass


def n_pursuit_states(width: int, height: int) -> int:
    return 16 * (width * height) ** 2 * 16


def table_bytes(n_states: int, n_actions: int, dtype=np.float32) -> int:
    return n_states * n_actions * np.dtype(dtype).itemsize


def pack_qstate(y, b_i, b_j, c_i, c_j, b_dir, c_dir, width: int, height: int) -> int:
    cells = width * height
    s = y
    s = s * cells + b_j * width + b_i
    s = s * cells + c_j * width + c_i
    s = s * 4 + b_dir
    return s * 4 + c_dir


def unpack_qstate(index: int, width: int, height: int) -> tuple[int, ...]:
    """Inverse of pack_qstate: ``(y, b_i, b_j, c_i, c_j, b_dir, c_dir)``."""
    cells = width * height
    index, c_dir = divmod(index, 4)
    index, b_dir = divmod(index, 4)
    index, c_cell = divmod(index, cells)
    y, b_cell = divmod(index, cells)
    return (y, b_cell % width, b_cell // width, c_cell % width, c_cell // width,
            b_dir, c_dir)


@dataclass
class QHyper:
    alpha: float = 0.1
    gamma: float = 0.99
    epsilon: float | None = None  # None: 1 / ln t schedule

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.epsilon is not None and not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")

    def epsilon_at(self, t: int) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 1.0 if t < 3 else 1.0 / math.log(t)


@dataclass
class QTable:
    values: np.ndarray  # (n_states, n_actions)
    hyper: QHyper = field(default_factory=QHyper)
    dims: tuple[int, int] = (0, 0)
    packing: int = PACK_PURSUIT
    visits: np.ndarray | None = None
    steps: int = 0

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def greedy(self, s: int) -> int:
        return int(np.argmax(self.values[s]))  # first maximum on ties

    def greedy_policy(self) -> np.ndarray:
        return np.argmax(self.values, axis=1)


def q_update(q: QTable, s: int, a: int, r: float, s_next: int) -> QTable:
    """``Q(s,a) += alpha * (r + gamma * max Q(s',.) - Q(s,a))``, in place."""
    row = q.values[s]
    old = float(row[a])
    target = r + q.hyper.gamma * float(q.values[s_next].max())
    row[a] = old + q.hyper.alpha * (target - old)
    return q


# --------------------------------------------------------------------------
# environments


class PursuitQEnv:
    """The pursuit benchmark as a single-step simulator on tuple states.

    A state is ``(ti, tj, bi, bj, bdir, ci, cj, cdir)``; the instantaneous
    reward of a move is the encounter indicator of the state it leads to.
    """

    n_actions = 16
    packing = PACK_PURSUIT

    _DI = (0, 1, 0, -1)
    _DJ = (-1, 0, 1, 0)
    _OFFSETS = tuple((di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1))

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.width, self.height = scenario.width, scenario.height
        self.n_states = n_pursuit_states(self.width, self.height)

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    def reset(self, rng: random.Random) -> tuple:
        W, H = self.width, self.height
        if self.scenario.case is Case.FIXED:
            ti, tj = W // 2, H // 2
        else:
            upper = W * (H // 2)
            cell = min(int(rng.random() * upper), upper - 1)
            ti, tj = cell % W, cell // W
        return (ti, tj, 0, H - 1, 2, W - 1, H - 1, 2)

    def observe(self, x: tuple) -> int:
        if self.scenario.case is Case.BLIND:
            return 0
        ti, tj, bi, bj, bd, ci, cj, cd = x
        r = self.scenario.radius
        bf = (ti - bi) * self._DI[bd] + (tj - bj) * self._DJ[bd] > 0
        cf = (ti - ci) * self._DI[cd] + (tj - cj) * self._DJ[cd] > 0
        bn = max(abs(ti - bi), abs(tj - bj)) < r
        cn = max(abs(ti - ci), abs(tj - cj)) < r
        return bf | bn << 1 | cf << 2 | cn << 3

    def encode(self, x: tuple) -> int:
        ti, tj, bi, bj, bd, ci, cj, cd = x
        return pack_qstate(self.observe(x), bi, bj, ci, cj, bd, cd, self.width, self.height)

    def reward(self, x: tuple) -> int:
        ti, tj, bi, bj, bd, ci, cj, cd = x
        r = self.scenario.radius
        return int(max(abs(ti - bi), abs(tj - bj)) <= r or max(abs(ti - ci), abs(tj - cj)) <= r)

    def _move(self, i, j, d, move):
        if move == 0:
            return i, j, (d - 1) % 4
        if move == 1:
            return i, j, (d + 1) % 4
        if move == 2:
            ni, nj = i + self._DI[d], j + self._DJ[d]
            if 0 <= ni < self.width and 0 <= nj < self.height:
                return ni, nj, d
        return i, j, d

    def _escape(self, x: tuple, u: float) -> tuple[int, int]:
        ti, tj, bi, bj, _, ci, cj, _ = x
        W, H = self.width, self.height
        cands, weights = [], []
        for di, dj in self._OFFSETS:
            ni, nj = ti + di, tj + dj
            inside = 0 <= ni < W and 0 <= nj < H
            cands.append((ni, nj))
            weights.append(((ni - bi) ** 2 + (nj - bj) ** 2 + (ni - ci) ** 2 + (nj - cj) ** 2)
                           if inside else 0)
        if sum(weights) == 0:
            weights = [int(0 <= ni < W and 0 <= nj < H) for ni, nj in cands]
        total = sum(weights)
        acc = 0
        for (ni, nj), wt in zip(cands, weights):
            acc += wt
            if u < acc / total:
                return ni, nj
        return next(c for c, wt in zip(reversed(cands), reversed(weights)) if wt > 0)

    def step(self, x: tuple, action: int, rng: random.Random) -> tuple[tuple, int]:
        ti, tj = x[0], x[1]
        if self.scenario.case is not Case.FIXED:
            ti, tj = self._escape(x, rng.random())
        bi, bj, bd = self._move(x[2], x[3], x[4], action % 4)
        ci, cj, cd = self._move(x[5], x[6], x[7], action // 4)
        nxt = (ti, tj, bi, bj, bd, ci, cj, cd)
        return nxt, self.reward(nxt)


class ChaseEnv:
    """One pursuer, a parked target and a fully observed pose.

    A small, deterministic MDP used to check the learner against exact
    dynamic programming.  State index ``(j * W + i) * 4 + heading``; actions
    are the four single-mobile moves.  Reward 1 when the move ends within
    ``radius`` (Chebyshev) of the target.
    """

    n_actions = 4
    packing = PACK_CHASE

    def __init__(self, width: int = 5, height: int = 5, target=(2, 2), radius: int = 0):
        self.width, self.height = width, height
        self.target = tuple(target)
        self.radius = radius
        self.n_states = width * height * 4
        self._pq = PursuitQEnv(Scenario(Case.FIXED, width=width, height=max(height, 2)))

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    def reset(self, rng: random.Random) -> tuple:
        s = rng.randrange(self.n_states)
        return self.decode(s)

    def decode(self, s: int) -> tuple:
        cell, d = divmod(s, 4)
        return cell % self.width, cell // self.width, d

    def encode(self, x: tuple) -> int:
        i, j, d = x
        return (j * self.width + i) * 4 + d

    def reward(self, x: tuple) -> int:
        i, j, _ = x
        return int(max(abs(i - self.target[0]), abs(j - self.target[1])) <= self.radius)

    def step(self, x: tuple, action: int, rng: random.Random) -> tuple[tuple, int]:
        nxt = self._pq._move(*x, action)
        return nxt, self.reward(nxt)


def make_env(scenario: Scenario) -> PursuitQEnv:
    return PursuitQEnv(scenario)


def check_budget(env, budget_bytes: int | None, dtype=np.float32) -> int:
    """Size of the table ``env`` needs; refuses tables above the budget."""
    size = table_bytes(env.n_states, env.n_actions, dtype)
    log.info("Q table: %d states x %d actions = %.3f GB", env.n_states, env.n_actions, size / 1e9)
    if budget_bytes is not None and size > budget_bytes:
        raise MemoryBudgetError(
            f"Q table needs {size / 1e9:.2f} GB but the memory budget is "
            f"{budget_bytes / 1e9:.2f} GB; reduce scenario.width/height")
    return size


# --------------------------------------------------------------------------
# learning and evaluation


def train_q(env, steps: int, hyper: QHyper | None = None, seed: int = 0,
            restart_every: int | None = None, q: QTable | None = None,
            budget_bytes: int | None = None, dtype=np.float32,
            initial_value: float = 0.0) -> QTable:
    """Epsilon-greedy Q-learning for ``steps`` interactions.

    The run is continuing; with ``restart_every`` the world is re-drawn from
    its initial law every that many steps (the update across the cut still
    uses the true successor).  A fresh table starts at ``initial_value``;
    an optimistic start such as ``1 / (1 - gamma)`` makes the greedy choice
    itself explore untried actions.
    """
    if isinstance(env, Scenario):
        env = PursuitQEnv(env)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    hyper = hyper or QHyper()
    if q is None:
        check_budget(env, budget_bytes, dtype)
        q = QTable(np.full((env.n_states, env.n_actions), initial_value, dtype=dtype), hyper,
                   env.dims, env.packing)
    if q.visits is None:
        q.visits = np.zeros(env.n_states, dtype=np.int64)
    rng = random.Random(seed)
    values, visits = q.values, q.visits
    alpha, gamma = hyper.alpha, hyper.gamma
    nA = env.n_actions

    x = env.reset(rng)
    s = env.encode(x)
    for t in range(q.steps + 1, q.steps + steps + 1):
        if rng.random() < hyper.epsilon_at(t):
            a = rng.randrange(nA)
        else:
            a = int(values[s].argmax())
        x, r = env.step(x, a, rng)
        s2 = env.encode(x)
        old = float(values[s, a])
        values[s, a] = old + alpha * (r + gamma * float(values[s2].max()) - old)
        visits[s] += 1
        if restart_every and t % restart_every == 0:
            x = env.reset(rng)
            s2 = env.encode(x)
        s = s2
    q.steps += steps
    return q


@dataclass
class WindowStats:
    worst: float
    mean: float
    best: float
    values: np.ndarray

    def as_tuple(self) -> tuple[float, float, float]:
        return self.worst, self.mean, self.best


def evaluate_q_windows(q: QTable, env, windows: int, seed: int, mode: str = "fresh",
                       window: int = 100, warmup: int = 10_000) -> WindowStats:
    """Undiscounted reward of the greedy policy summed over ``window`` steps.

    ``fresh``: every window starts from a newly drawn initial world.
    ``continuation``: one run, ``warmup`` steps discarded, then consecutive
    windows, which emulates the infinite-horizon regime.
    """
    if isinstance(env, Scenario):
        env = PursuitQEnv(env)
    if windows < 1:
        raise ValueError("windows must be >= 1")
    if mode not in ("fresh", "continuation"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    rng = random.Random(seed)
    values = q.values
    out = np.zeros(windows)

    def run(x, n):
        total = 0
        for _ in range(n):
            x, r = env.step(x, int(values[env.encode(x)].argmax()), rng)
            total += r
        return x, total

    if mode == "fresh":
        for k in range(windows):
            _, out[k] = run(env.reset(rng), window)
    else:
        x, _ = run(env.reset(rng), warmup)
        for k in range(windows):
            x, out[k] = run(x, window)
    return WindowStats(float(out.min()), float(out.mean()), float(out.max()), out)


# --------------------------------------------------------------------------
# snapshots


def save_qtable(q: QTable, path) -> None:
    values = np.ascontiguousarray(q.values, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, q.dims[0], q.dims[1], q.packing,
                             q.n_states, q.n_actions))
        values.tofile(f)


def load_qtable(path, hyper: QHyper | None = None) -> QTable:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise SnapshotError(f"{path}: truncated header")
        magic, version, w, h, packing, n_states, n_actions = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise SnapshotError(f"{path}: not a Q-table snapshot")
        if version != _VERSION:
            raise SnapshotError(f"{path}: unsupported snapshot version {version}")
        if packing == PACK_PURSUIT and n_states != n_pursuit_states(w, h):
            raise SnapshotError(f"{path}: state count does not match a {w}x{h} grid")
        if packing not in (PACK_PURSUIT, PACK_CHASE):
            raise SnapshotError(f"{path}: unknown packing order {packing}")
        values = np.fromfile(f, dtype=np.float32)
    if values.size != n_states * n_actions:
        raise SnapshotError(f"{path}: expected {n_states * n_actions} values, found {values.size}")
    return QTable(values.reshape(n_states, n_actions), hyper or QHyper(), (w, h), packing)
