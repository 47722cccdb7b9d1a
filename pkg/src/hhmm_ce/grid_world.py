"""Two pursuers, one evading target, on a square lattice.

Coordinates are ``(i, j)`` with ``i`` the column and ``j`` the row; ``j``
grows downward, so the pursuers start in the bottom corners (``j = H - 1``)
and the evader of the moving-target cases starts in the upper half.

Codes used on the wire:

* observation: bit0 = B sees the target forward, bit1 = B is near
  (``d_inf < radius``), bit2/bit3 = the same for C.
* action: ``move_b + 4 * move_c`` with moves ordered
  ``TURN_LEFT, TURN_RIGHT, FORWARD, NO_MOVE``.

The module has two layers.  ``WorldArrays``/``PursuitEnv`` hold a batch of
worlds as flat integer arrays and are what rollouts use.  The scalar API
(``WorldState``, ``observe``, ``apply_action`` ...) wraps the same batch code
with a batch of one.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace

import numpy as np

from .streams import RESET_SLOT, TARGET_SLOT, uniforms

N_OBSERVATIONS = 16
N_ACTIONS = 16


class Case(enum.Enum):
    FIXED = "case1"  # target parked in the middle
    BLIND = "case2"  # moving target, observation channel constant
    FULL = "case3"  # moving target, observed

    @classmethod
    def parse(cls, value) -> "Case":
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name, member.name.lower()):
                return member
        raise ValueError(f"unknown case {value!r}; expected one of "
                         f"{[m.value for m in cls]}")


class Orientation(enum.IntEnum):
    UP = 0
    RIGHT = 1
    DOWN = 2
    LEFT = 3

    def turn_left(self) -> "Orientation":
        return Orientation((self - 1) % 4)

    def turn_right(self) -> "Orientation":
        return Orientation((self + 1) % 4)


class Move(enum.IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    FORWARD = 2
    NO_MOVE = 3


# unit step per orientation, indexed by Orientation value
_DI = np.array([0, 1, 0, -1], dtype=np.int64)
_DJ = np.array([-1, 0, 1, 0], dtype=np.int64)

# Moore neighbourhood of the target, fixed order (di major)
NEIGHBOR_OFFSETS = np.array(
    [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)], dtype=np.int64
)


@dataclass(frozen=True)
class Scenario:
    case: Case = Case.FULL
    horizon: int = 100
    radius: int = 3
    width: int = 20
    height: int = 20

    def __post_init__(self):
        object.__setattr__(self, "case", Case.parse(self.case))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("lattice must be at least 1 x 1")
        if self.case is not Case.FIXED and self.height < 2:
            raise ValueError("a moving target needs height >= 2 (it starts in the upper half)")

    @property
    def n_cells(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class LatticePoint:
    i: int
    j: int


@dataclass(frozen=True)
class MobileState:
    pos: LatticePoint
    dir: Orientation


@dataclass(frozen=True)
class WorldState:
    target: LatticePoint
    b: MobileState
    c: MobileState
    t: int = 1


@dataclass
class WorldArrays:
    """A batch of worlds; every field is an int64 array of the batch length."""

    target_i: np.ndarray
    target_j: np.ndarray
    b_i: np.ndarray
    b_j: np.ndarray
    b_dir: np.ndarray
    c_i: np.ndarray
    c_j: np.ndarray
    c_dir: np.ndarray

    def __len__(self) -> int:
        return len(self.target_i)

    def columns(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "WorldArrays":
        return WorldArrays(**{k: v.copy() for k, v in self.columns().items()})

    @classmethod
    def from_states(cls, states) -> "WorldArrays":
        def col(get):
            return np.array([get(s) for s in states], dtype=np.int64)

        return cls(
            target_i=col(lambda s: s.target.i),
            target_j=col(lambda s: s.target.j),
            b_i=col(lambda s: s.b.pos.i),
            b_j=col(lambda s: s.b.pos.j),
            b_dir=col(lambda s: int(s.b.dir)),
            c_i=col(lambda s: s.c.pos.i),
            c_j=col(lambda s: s.c.pos.j),
            c_dir=col(lambda s: int(s.c.dir)),
        )

    def state(self, k: int, t: int = 1) -> WorldState:
        return WorldState(
            target=LatticePoint(int(self.target_i[k]), int(self.target_j[k])),
            b=MobileState(LatticePoint(int(self.b_i[k]), int(self.b_j[k])),
                          Orientation(int(self.b_dir[k]))),
            c=MobileState(LatticePoint(int(self.c_i[k]), int(self.c_j[k])),
                          Orientation(int(self.c_dir[k]))),
            t=t,
        )


# --------------------------------------------------------------------------
# codes


def encode_action(move_b: Move, move_c: Move) -> int:
    return int(move_b) + 4 * int(move_c)


def decode_action(code: int) -> tuple[Move, Move]:
    if not 0 <= code < N_ACTIONS:
        raise ValueError(f"action code out of range: {code}")
    return Move(code % 4), Move(code // 4)


def encode_observation(b_forward: bool, b_near: bool,
                       c_forward: bool, c_near: bool) -> int:
    return int(b_forward) | int(b_near) << 1 | int(c_forward) << 2 | int(c_near) << 3


def decode_observation(code: int) -> tuple[bool, bool, bool, bool]:
    if not 0 <= code < N_OBSERVATIONS:
        raise ValueError(f"observation code out of range: {code}")
    return bool(code & 1), bool(code & 2), bool(code & 4), bool(code & 8)


# --------------------------------------------------------------------------
# batch core


def _cheb(ai, aj, bi, bj):
    return np.maximum(np.abs(ai - bi), np.abs(aj - bj))


def _forward(pi, pj, pdir, ti, tj):
    # target strictly ahead along the heading
    return (ti - pi) * _DI[pdir] + (tj - pj) * _DJ[pdir] > 0


def observe_batch(w: WorldArrays, scenario: Scenario) -> np.ndarray:
    if scenario.case is Case.BLIND:
        return np.zeros(len(w), dtype=np.int64)
    r = scenario.radius
    bf = _forward(w.b_i, w.b_j, w.b_dir, w.target_i, w.target_j)
    bn = _cheb(w.b_i, w.b_j, w.target_i, w.target_j) < r
    cf = _forward(w.c_i, w.c_j, w.c_dir, w.target_i, w.target_j)
    cn = _cheb(w.c_i, w.c_j, w.target_i, w.target_j) < r
    return (bf.astype(np.int64) | bn << 1 | cf << 2 | cn << 3).astype(np.int64)


def reward_batch(w: WorldArrays, scenario: Scenario) -> np.ndarray:
    r = scenario.radius
    near_b = _cheb(w.b_i, w.b_j, w.target_i, w.target_j) <= r
    near_c = _cheb(w.c_i, w.c_j, w.target_i, w.target_j) <= r
    return (near_b | near_c).astype(np.int64)


def _move_mobile(pi, pj, pdir, move, width, height):
    fwd = move == Move.FORWARD
    ni = np.where(fwd, pi + _DI[pdir], pi)
    nj = np.where(fwd, pj + _DJ[pdir], pj)
    blocked = (ni < 0) | (ni >= width) | (nj < 0) | (nj >= height)
    ni = np.where(blocked, pi, ni)
    nj = np.where(blocked, pj, nj)
    ndir = np.where(move == Move.TURN_LEFT, (pdir - 1) % 4,
                    np.where(move == Move.TURN_RIGHT, (pdir + 1) % 4, pdir))
    return ni, nj, ndir


def apply_action_batch(w: WorldArrays, actions: np.ndarray,
                       scenario: Scenario) -> WorldArrays:
    actions = np.asarray(actions, dtype=np.int64)
    bi, bj, bd = _move_mobile(w.b_i, w.b_j, w.b_dir, actions % 4,
                              scenario.width, scenario.height)
    ci, cj, cd = _move_mobile(w.c_i, w.c_j, w.c_dir, actions // 4,
                              scenario.width, scenario.height)
    return replace(w, b_i=bi, b_j=bj, b_dir=bd, c_i=ci, c_j=cj, c_dir=cd)


def target_weights_batch(w: WorldArrays, scenario: Scenario) -> np.ndarray:
    """Unnormalized escape weights, shape (batch, 9) over NEIGHBOR_OFFSETS."""
    ni = w.target_i[:, None] + NEIGHBOR_OFFSETS[:, 0]
    nj = w.target_j[:, None] + NEIGHBOR_OFFSETS[:, 1]
    inside = (ni >= 0) & (ni < scenario.width) & (nj >= 0) & (nj < scenario.height)
    wt = ((ni - w.b_i[:, None]) ** 2 + (nj - w.b_j[:, None]) ** 2
          + (ni - w.c_i[:, None]) ** 2 + (nj - w.c_j[:, None]) ** 2)
    wt = np.where(inside, wt, 0)
    degenerate = wt.sum(axis=1) == 0
    if degenerate.any():
        wt[degenerate] = inside[degenerate]
    return wt


def target_cdf_batch(w: WorldArrays, scenario: Scenario) -> np.ndarray:
    cum = np.cumsum(target_weights_batch(w, scenario), axis=1).astype(np.float64)
    return cum / cum[:, -1:]


def sample_target_batch(w: WorldArrays, scenario: Scenario,
                        u: np.ndarray) -> WorldArrays:
    """Move each target by inverse-CDF sampling of its escape law with ``u``."""
    if scenario.case is Case.FIXED:
        return w
    k = (u[:, None] >= target_cdf_batch(w, scenario)).sum(axis=1)
    k = np.minimum(k, len(NEIGHBOR_OFFSETS) - 1)
    return replace(w, target_i=w.target_i + NEIGHBOR_OFFSETS[k, 0],
                   target_j=w.target_j + NEIGHBOR_OFFSETS[k, 1])


def initial_batch(scenario: Scenario, u: np.ndarray) -> WorldArrays:
    n = len(u)
    W, H = scenario.width, scenario.height
    if scenario.case is Case.FIXED:
        ti = np.full(n, W // 2, dtype=np.int64)
        tj = np.full(n, H // 2, dtype=np.int64)
    else:
        upper = W * (H // 2)
        cell = np.minimum((u * upper).astype(np.int64), upper - 1)
        ti, tj = cell % W, cell // W
    ones = np.ones(n, dtype=np.int64)
    return WorldArrays(
        target_i=ti, target_j=tj,
        b_i=0 * ones, b_j=(H - 1) * ones, b_dir=Orientation.DOWN * ones,
        c_i=(W - 1) * ones, c_j=(H - 1) * ones, c_dir=Orientation.DOWN * ones,
    )


class PursuitEnv:
    """Batched episodic interface used by the rollout engine.

    Randomness is drawn from the counter-based streams, keyed by each
    episode's sample index, so an episode does not depend on its batch-mates.
    """

    n_obs = N_OBSERVATIONS
    n_actions = N_ACTIONS

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    @property
    def horizon(self) -> int:
        return self.scenario.horizon

    def reset(self, seed: int, ids: np.ndarray) -> WorldArrays:
        return initial_batch(self.scenario, uniforms(seed, ids, 0, RESET_SLOT))

    def observe(self, w: WorldArrays) -> np.ndarray:
        return observe_batch(w, self.scenario)

    def reward(self, w: WorldArrays, actions: np.ndarray) -> np.ndarray:
        # encounters only depend on the state the decision is taken in
        return reward_batch(w, self.scenario)

    def step(self, w: WorldArrays, actions: np.ndarray, seed: int,
             ids: np.ndarray, t: int) -> WorldArrays:
        # the escape law looks at where the pursuers stand before they move
        moved = sample_target_batch(w, self.scenario,
                                    uniforms(seed, ids, t, TARGET_SLOT))
        return apply_action_batch(moved, actions, self.scenario)

    def columns(self, w: WorldArrays) -> dict[str, np.ndarray]:
        return w.columns()


# --------------------------------------------------------------------------
# scalar API


def d_inf(a: LatticePoint, b: LatticePoint) -> int:
    return max(abs(a.i - b.i), abs(a.j - b.j))


def in_bounds(p: LatticePoint, scenario: Scenario) -> bool:
    return 0 <= p.i < scenario.width and 0 <= p.j < scenario.height


def initial_state(scenario: Scenario, rng: np.random.Generator) -> WorldState:
    u = np.array([rng.random()]) if scenario.case is not Case.FIXED else np.zeros(1)
    return initial_batch(scenario, u).state(0)


def observe(s: WorldState, scenario: Scenario) -> int:
    return int(observe_batch(WorldArrays.from_states([s]), scenario)[0])


def apply_action(s: WorldState, action: int, scenario: Scenario) -> WorldState:
    decode_action(action)
    w = apply_action_batch(WorldArrays.from_states([s]), np.array([action]), scenario)
    return w.state(0, s.t)


def target_distribution(s: WorldState, scenario: Scenario) -> dict[LatticePoint, float]:
    wt = target_weights_batch(WorldArrays.from_states([s]), scenario)[0]
    total = wt.sum()
    return {
        LatticePoint(s.target.i + int(di), s.target.j + int(dj)): wt[k] / total
        for k, (di, dj) in enumerate(NEIGHBOR_OFFSETS) if wt[k] > 0
    }


def target_step(s: WorldState, scenario: Scenario,
                rng: np.random.Generator) -> WorldState:
    """Sample the next target position; the time index advances by one."""
    if scenario.case is Case.FIXED:
        return replace(s, t=s.t + 1)
    w = sample_target_batch(WorldArrays.from_states([s]), scenario,
                            np.array([rng.random()]))
    return w.state(0, s.t + 1)


def step_reward(s: WorldState, scenario: Scenario) -> int:
    r = scenario.radius
    return int(d_inf(s.b.pos, s.target) <= r or d_inf(s.c.pos, s.target) <= r)


def transition(s: WorldState, action: int, scenario: Scenario,
               rng: np.random.Generator) -> WorldState:
    """One full turn: the target escapes from the current poses, then the
    pursuers execute ``action``."""
    moved = target_step(s, scenario, rng)
    return apply_action(moved, action, scenario)
