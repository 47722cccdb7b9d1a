"""Sampling complete world/policy trajectories.

At every step ``t = 1..T`` of an episode: the policy receives ``y_t`` and
draws ``(m_t, d_t)``, the step reward ``v(x_t, d_t)`` is accumulated, and the
world advances to ``x_{t+1}``.  For the pursuit benchmark the step reward
only looks at ``x_t``.

An environment is any object with ``n_obs``, ``n_actions``, ``horizon`` and
the batched methods ``reset(seed, ids)``, ``observe(x)``, ``reward(x, d)``,
``step(x, d, seed, ids, t)`` and ``columns(x)``.

Episode ``k`` of a batch seeded with ``seed`` draws all its randomness from
the counter-based stream ``(seed, k)``, so a batch can be cut into chunks and
run in any order or in worker processes without changing a single value.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid_world import PursuitEnv, Scenario, WorldArrays, WorldState, step_reward
from .policy import HhmmPolicy, sample_batch
from .streams import POLICY_SLOT, Stream, uniforms


def as_env(env_or_scenario):
    if isinstance(env_or_scenario, Scenario):
        return PursuitEnv(env_or_scenario)
    return env_or_scenario


@dataclass(frozen=True)
class Trajectory:
    obs: np.ndarray  # (T,)
    actions: np.ndarray  # (T,)
    memories: np.ndarray  # (T, L)
    rewards: np.ndarray  # (T,) per-step rewards
    states: dict  # column name -> (T,) array, one entry per world variable

    @property
    def reward(self) -> int:
        return int(self.rewards.sum())

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def world_states(self) -> list[WorldState]:
        w = WorldArrays(**self.states)
        return [w.state(t, t + 1) for t in range(self.horizon)]


@dataclass(frozen=True)
class RolloutBatch:
    """Trajectories of a batch as stacked arrays; indexing gives a Trajectory."""

    obs: np.ndarray  # (n, T)
    actions: np.ndarray  # (n, T)
    memories: np.ndarray  # (n, T, L)
    step_rewards: np.ndarray  # (n, T)
    states: dict  # column -> (n, T)

    @property
    def rewards(self) -> np.ndarray:
        return self.step_rewards.sum(axis=1)

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, k):
        if isinstance(k, (int, np.integer)):
            return Trajectory(self.obs[k], self.actions[k], self.memories[k],
                              self.step_rewards[k],
                              {name: col[k] for name, col in self.states.items()})
        return RolloutBatch(self.obs[k], self.actions[k], self.memories[k],
                            self.step_rewards[k],
                            {name: col[k] for name, col in self.states.items()})

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @classmethod
    def concat(cls, parts: list["RolloutBatch"]) -> "RolloutBatch":
        return cls(
            np.concatenate([p.obs for p in parts]),
            np.concatenate([p.actions for p in parts]),
            np.concatenate([p.memories for p in parts]),
            np.concatenate([p.step_rewards for p in parts]),
            {name: np.concatenate([p.states[name] for p in parts])
             for name in parts[0].states},
        )


def rollout_ids(env, h: HhmmPolicy, seed: int, ids: np.ndarray,
                record_states: bool = True) -> RolloutBatch:
    """Run the episodes whose stream indices are ``ids`` side by side."""
    env = as_env(env)
    if (env.n_obs, env.n_actions) != (h.n_obs, h.n_actions):
        raise ValueError("policy and environment disagree on observation/action counts")
    ids = np.asarray(ids, dtype=np.uint64)
    n, T, L = len(ids), env.horizon, h.n_levels
    obs = np.empty((n, T), dtype=np.int64)
    acts = np.empty((n, T), dtype=np.int64)
    mems = np.empty((n, T, L), dtype=np.int64)
    rews = np.empty((n, T), dtype=np.int64)
    states = {}
    slots = POLICY_SLOT + np.arange(L + 1)

    x = env.reset(seed, ids)
    prev = None
    for t in range(T):
        if record_states:
            for name, col in env.columns(x).items():
                states.setdefault(name, np.empty((n, T), dtype=np.int64))[:, t] = col
        y = env.observe(x)
        prev, d = sample_batch(h, y, prev, uniforms(seed, ids, t + 1, slots))
        rews[:, t] = env.reward(x, d)
        obs[:, t], acts[:, t], mems[:, t] = y, d, prev
        x = env.step(x, d, seed, ids, t + 1)
    return RolloutBatch(obs, acts, mems, rews, states)


def run_episode(env, h: HhmmPolicy, stream: Stream) -> Trajectory:
    return rollout_ids(env, h, stream.seed, np.array([stream.index]))[0]


def _chunk_job(args):
    env, h, seed, lo, hi, record = args
    return rollout_ids(env, h, seed, np.arange(lo, hi), record)


def batch_rollouts(env, h: HhmmPolicy, n: int, seed: int, workers: int = 1,
                   chunk: int = 1000, record_states: bool = True) -> RolloutBatch:
    """``n`` independent episodes; episode ``k`` uses stream ``(seed, k)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    env = as_env(env)
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    jobs = [(env, h, seed, lo, hi, record_states) for lo, hi in bounds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    return parts[0] if len(parts) == 1 else RolloutBatch.concat(parts)


def recomputed_reward(traj: Trajectory, scenario: Scenario) -> int:
    return sum(step_reward(s, scenario) for s in traj.world_states())


# --------------------------------------------------------------------------
# export

_DIR_NAMES = "URDL"


def trajectory_header(n_levels: int) -> list[str]:
    return (["t", "target_i", "target_j", "b_i", "b_j", "b_dir", "c_i", "c_j", "c_dir",
             "y", "d"] + [f"m{k}" for k in range(1, n_levels + 1)] + ["cumV"])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per step; directions as U/R/D/L, ``cumV`` the reward so far."""
    L = traj.memories.shape[1]
    cum = np.cumsum(traj.rewards)
    s = traj.states
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(trajectory_header(L))
        for t in range(traj.horizon):
            w.writerow([t + 1, s["target_i"][t], s["target_j"][t],
                        s["b_i"][t], s["b_j"][t], _DIR_NAMES[s["b_dir"][t]],
                        s["c_i"][t], s["c_j"][t], _DIR_NAMES[s["c_dir"][t]],
                        traj.obs[t], traj.actions[t], *traj.memories[t], cum[t]])
