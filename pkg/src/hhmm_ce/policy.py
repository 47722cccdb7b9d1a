"""Hierarchical HMM policies with observation input and decision output.

A policy with level sizes ``M1..ML`` holds one conditional table per factor
of

    h(d, m | y) = prod_t  h0(d_t | m1_t)
                          h1(m1_t | y_t, m2_t)
                          prod_{l=2..L} hl(ml_t | m(l-1)_{t-1}, m(l+1)_t)

Tables are row-major with the conditioned variable on the last axis:

    h0   (M1, n_actions)
    h1   (n_obs, M2 or 1, M1)
    hl   (M(l-1) + 1, M(l+1) or 1, Ml)      l = 2..L

A missing upper level is the single index 0 of an axis of length one.  The
previous-step axis of ``hl`` has one extra trailing index, ``M(l-1)``, used
at the first step when there is no previous memory.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


class PolicyFormatError(ValueError):
    """A policy document is malformed or from an unsupported version."""


def _check_sizes(level_sizes) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in level_sizes)
    if len(sizes) < 1 or any(s < 1 for s in sizes):
        raise ValueError(f"level sizes must be a nonempty list of positive ints, got {level_sizes!r}")
    return sizes


def table_shapes(level_sizes, n_obs: int = 16, n_actions: int = 16) -> list[tuple[int, int, ...]]:
    sizes = _check_sizes(level_sizes)
    L = len(sizes)

    def upper(level):  # 1-based level -> extent of the next level axis
        return sizes[level] if level < L else 1

    shapes = [(sizes[0], n_actions), (n_obs, upper(1), sizes[0])]
    for lev in range(2, L + 1):
        shapes.append((sizes[lev - 2] + 1, upper(lev), sizes[lev - 1]))
    return shapes


def param_count(level_sizes, n_obs: int = 16, n_actions: int = 16) -> int:
    """Free parameters of the policy family, boundary contexts excluded.

    >>> param_count([16, 16]), param_count([16, 2, 2, 2]), param_count([16])
    (4320, 758, 480)
    """
    total = 0
    for k, shape in enumerate(table_shapes(level_sizes, n_obs, n_actions)):
        contexts = math.prod(shape[:-1])
        if k >= 2:
            contexts -= shape[1]  # the reserved first-step row block
        total += (shape[-1] - 1) * contexts
    return total


@dataclass(frozen=True, eq=False)
class HhmmPolicy:
    level_sizes: tuple[int, ...]
    tables: tuple[np.ndarray, ...]
    n_obs: int = 16
    n_actions: int = 16

    def __post_init__(self):
        sizes = _check_sizes(self.level_sizes)
        object.__setattr__(self, "level_sizes", sizes)
        expected = table_shapes(sizes, self.n_obs, self.n_actions)
        if len(self.tables) != len(expected):
            raise ValueError(f"expected {len(expected)} tables, got {len(self.tables)}")
        tables = []
        for k, (tab, shape) in enumerate(zip(self.tables, expected)):
            tab = np.array(tab, dtype=np.float64)
            if tab.shape != shape:
                raise ValueError(f"table h{k} has shape {tab.shape}, expected {shape}")
            tab.setflags(write=False)
            tables.append(tab)
        object.__setattr__(self, "tables", tuple(tables))
        object.__setattr__(self, "_cdfs", None)

    @property
    def n_levels(self) -> int:
        return len(self.level_sizes)

    @property
    def h0(self) -> np.ndarray:
        return self.tables[0]

    @property
    def h1(self) -> np.ndarray:
        return self.tables[1]

    def level_table(self, level: int) -> np.ndarray:
        """Table ``h^level``; level 0 is the decision table."""
        return self.tables[level]

    def max_row_error(self) -> float:
        return max(float(np.abs(t.sum(axis=-1) - 1.0).max()) for t in self.tables)

    def is_stochastic(self, tol: float = 1e-9) -> bool:
        return all(np.all(t >= 0) for t in self.tables) and self.max_row_error() <= tol

    def cdfs(self) -> tuple[np.ndarray, ...]:
        if self._cdfs is None:
            cdfs = []
            for t in self.tables:
                c = np.cumsum(t, axis=-1)
                c /= c[..., -1:]
                cdfs.append(c)
            object.__setattr__(self, "_cdfs", tuple(cdfs))
        return self._cdfs

    def __eq__(self, other) -> bool:
        if not isinstance(other, HhmmPolicy):
            return NotImplemented
        return (self.level_sizes == other.level_sizes
                and (self.n_obs, self.n_actions) == (other.n_obs, other.n_actions)
                and all(np.array_equal(a, b) for a, b in zip(self.tables, other.tables)))


def flat_init(level_sizes, n_obs: int = 16, n_actions: int = 16) -> HhmmPolicy:
    shapes = table_shapes(level_sizes, n_obs, n_actions)
    return HhmmPolicy(level_sizes, tuple(np.full(s, 1.0 / s[-1]) for s in shapes),
                      n_obs, n_actions)


def _inverse_cdf(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    k = (u[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(k, cdf_rows.shape[1] - 1)


def sample_batch(h: HhmmPolicy, obs: np.ndarray, prev: np.ndarray | None,
                 u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One step for a batch of episodes.

    ``obs`` has shape (n,), ``prev`` is the (n, L) memory of the previous step
    or None at the first step, ``u`` holds (n, L + 1) uniforms: column
    ``l - 1`` drives level ``l`` and the last column drives the decision.
    Levels are drawn top-down, then the decision.
    """
    L = h.n_levels
    n = len(obs)
    cdfs = h.cdfs()
    mem = np.zeros((n, L), dtype=np.int64)
    for lev in range(L, 1, -1):
        if prev is None:
            back = np.full(n, h.level_sizes[lev - 2], dtype=np.int64)
        else:
            back = prev[:, lev - 2]
        up = mem[:, lev] if lev < L else np.zeros(n, dtype=np.int64)
        mem[:, lev - 1] = _inverse_cdf(cdfs[lev][back, up], u[:, lev - 1])
    up = mem[:, 1] if L > 1 else np.zeros(n, dtype=np.int64)
    mem[:, 0] = _inverse_cdf(cdfs[1][obs, up], u[:, 0])
    act = _inverse_cdf(cdfs[0][mem[:, 0]], u[:, L])
    return mem, act


def _check_stack(h: HhmmPolicy, m, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.int64)
    if m.shape[-1:] != (h.n_levels,):
        raise ValueError(f"{what} must hold {h.n_levels} memory symbols, got shape {m.shape}")
    if np.any(m < 0) or np.any(m >= np.array(h.level_sizes)):
        raise ValueError(f"{what} has a symbol outside its level range: {m.tolist()}")
    return m


def sample_step(h: HhmmPolicy, y: int, prev, rng: np.random.Generator) -> tuple[tuple[int, ...], int]:
    """Draw ``(memory stack, action)`` for one step; ``prev`` is None at t=1."""
    if not 0 <= y < h.n_obs:
        raise ValueError(f"observation out of range: {y}")
    if prev is not None:
        prev = _check_stack(h, prev, "previous memory")[None, :]
    u = rng.random((1, h.n_levels + 1))
    mem, act = sample_batch(h, np.array([y]), prev, u)
    return tuple(int(x) for x in mem[0]), int(act[0])


def _factor_indices(h: HhmmPolicy, actions, obs, memories):
    """Yield (table index, flat context index, outcome) arrays for every factor
    of every step, for trajectories stacked as (n, T[, L])."""
    L = h.n_levels
    n, T = actions.shape
    yield 0, memories[..., 0], actions
    up = memories[..., 1] if L > 1 else np.zeros((n, T), dtype=np.int64)
    yield 1, obs * (h.level_sizes[1] if L > 1 else 1) + up, memories[..., 0]
    for lev in range(2, L + 1):
        back = np.empty((n, T), dtype=np.int64)
        back[:, 0] = h.level_sizes[lev - 2]
        back[:, 1:] = memories[:, :-1, lev - 2]
        width_up = h.level_sizes[lev] if lev < L else 1
        up = memories[..., lev] if lev < L else np.zeros((n, T), dtype=np.int64)
        yield lev, back * width_up + up, memories[..., lev - 1]


def _stack_inputs(h, actions, obs, memories):
    actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
    obs = np.atleast_2d(np.asarray(obs, dtype=np.int64))
    memories = np.asarray(memories, dtype=np.int64)
    if memories.ndim == 2:
        memories = memories[None]
    if not (actions.shape == obs.shape == memories.shape[:2]):
        raise ValueError(
            f"sequence length mismatch: actions {actions.shape}, "
            f"observations {obs.shape}, memories {memories.shape}")
    _check_stack(h, memories, "memory sequence")
    return actions, obs, memories


def trajectory_log_prob(h: HhmmPolicy, actions, obs, memories) -> float:
    """``log h(d, m | y)`` of one trajectory; ``-inf`` if any factor is zero."""
    actions, obs, memories = _stack_inputs(h, actions, obs, memories)
    total = 0.0
    with np.errstate(divide="ignore"):
        for k, ctx, out in _factor_indices(h, actions, obs, memories):
            rows = h.tables[k].reshape(-1, h.tables[k].shape[-1])
            total += float(np.log(rows[ctx, out]).sum())
    return total


def count_tables(h: HhmmPolicy, actions, obs, memories) -> list[np.ndarray]:
    """Joint (context, outcome) counts per table, in table layout."""
    actions, obs, memories = _stack_inputs(h, actions, obs, memories)
    counts = []
    for k, ctx, out in _factor_indices(h, actions, obs, memories):
        shape = h.tables[k].shape
        width = shape[-1]
        flat = np.bincount((ctx * width + out).ravel(), minlength=math.prod(shape))
        counts.append(flat.reshape(shape).astype(np.float64))
    return counts


def ce_update(old: HhmmPolicy, actions, obs, memories, smoothing: float = 0.0) -> HhmmPolicy:
    """Refit every conditional row to the selected trajectories.

    Each row becomes ``(count(outcome, context) + s) / (count(context) + s * width)``.
    A context that the selection never visits keeps its row from ``old``.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    actions = np.asarray(actions)
    if actions.size == 0:
        raise ValueError("cannot update from an empty elite set")
    tables = []
    for tab, cnt in zip(old.tables, count_tables(old, actions, obs, memories)):
        ctx_total = cnt.sum(axis=-1, keepdims=True)
        seen = ctx_total > 0
        denom = np.where(seen, ctx_total + smoothing * tab.shape[-1], 1.0)
        tables.append(np.where(seen, (cnt + smoothing) / denom, tab))
    return HhmmPolicy(old.level_sizes, tuple(tables), old.n_obs, old.n_actions)


# --------------------------------------------------------------------------
# persistence


def policy_to_dict(h: HhmmPolicy, smoothing: float | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "level_sizes": list(h.level_sizes),
        "n_obs": h.n_obs,
        "n_actions": h.n_actions,
        "smoothing": smoothing,
        "tables": {f"h{k}": t.tolist() for k, t in enumerate(h.tables)},
    }


def policy_from_dict(doc: dict) -> HhmmPolicy:
    if not isinstance(doc, dict):
        raise PolicyFormatError("policy document must be a mapping")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise PolicyFormatError(f"unsupported policy format_version {version!r}")
    try:
        sizes = _check_sizes(doc["level_sizes"])
        names = [f"h{k}" for k in range(len(sizes) + 1)]
        if sorted(doc["tables"]) != sorted(names):
            raise PolicyFormatError(f"policy tables must be exactly {names}")
        tables = tuple(np.array(doc["tables"][name], dtype=np.float64) for name in names)
        h = HhmmPolicy(sizes, tables, int(doc.get("n_obs", 16)), int(doc.get("n_actions", 16)))
    except PolicyFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyFormatError(f"malformed policy document: {exc}") from exc
    if not h.is_stochastic(1e-9):
        raise PolicyFormatError("policy rows are not probability vectors")
    return h


def save_policy(h: HhmmPolicy, path, smoothing: float | None = None) -> None:
    # json writes floats with repr(), the shortest string that round-trips
    with open(path, "w") as f:
        json.dump(policy_to_dict(h, smoothing), f, indent=1)
        f.write("\n")


def load_policy(path) -> HhmmPolicy:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise PolicyFormatError(f"{path}: not a policy document ({exc})") from exc
    return policy_from_dict(doc)


def point_mass(level_sizes, choose: Sequence, n_obs: int = 16, n_actions: int = 16) -> HhmmPolicy:
    """Deterministic policy; ``choose[k]`` maps a context index tuple of
    table ``k`` to the outcome it always emits."""
    tables = []
    for k, shape in enumerate(table_shapes(level_sizes, n_obs, n_actions)):
        tab = np.zeros(shape)
        for ctx in np.ndindex(*shape[:-1]):
            tab[ctx + (int(choose[k](*ctx)),)] = 1.0
        tables.append(tab)
    return HhmmPolicy(level_sizes, tuple(tables), n_obs, n_actions)
