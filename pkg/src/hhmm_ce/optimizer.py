"""Cross-entropy search over HHMM policies.

Each iteration draws ``n_samples`` episodes from the current policy, keeps
the ``ceil(rho * n_samples)`` best as the elite and refits every table to the
elite by counting.  Progress is measured by the pair (elite threshold, elite
mean), compared lexicographically, where the threshold is the reward of the
worst elite episode.  An iteration is unsuccessful when its pair does not beat
the best pair seen so far; the search stops after ``patience`` unsuccessful
iterations in a row.  The elite mean only matters while the threshold is
flat, which is what happens for a long time under sparse rewards, when more
than half of the batch scores zero.

The policy returned is the checkpoint with the highest mean reward on an
independent batch.  The batch drawn at iteration ``i + 1`` is exactly such a
batch for the policy produced at iteration ``i`` (fresh stream, same size),
so scoring checkpoints costs nothing extra; only the last policy needs a
dedicated evaluation batch.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .policy import HhmmPolicy, ce_update, flat_init
from .rollout import as_env, batch_rollouts
from .streams import derive_seed

log = logging.getLogger(__name__)

CRITERIA = {"weak": 100, "strong": 500}

_TRAIN, _EVAL = 0, 1


def parse_criterion(value) -> int:
    """'weak' -> 100, 'strong' -> 500, or a positive integer patience."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key in CRITERIA:
            return CRITERIA[key]
        value = int(key)
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValueError(f"criterion must be 'weak', 'strong' or a positive int, got {value!r}")
    return int(value)


@dataclass
class CeConfig:
    n_samples: int = 1000
    rho: float = 0.5
    smoothing: float = 1e-3
    criterion: int | str = "weak"
    max_iterations: int = 5000
    seed: int = 0
    workers: int = 1
    step_size: float = 1.0  # 1.0: the refitted tables replace the old ones

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must lie in (0, 1]")
        self.patience = parse_criterion(self.criterion)

    @property
    def n_elite(self) -> int:
        return elite_size(self.n_samples, self.rho)


@dataclass
class IterationRecord:
    iteration: int
    best: int
    threshold: int
    elite_mean: float
    best_so_far: int
    unsuccessful: int
    batch_mean: float


@dataclass
class CeHistory:
    records: list[IterationRecord] = field(default_factory=list)
    checkpoint_scores: list[float] = field(default_factory=list)
    selected: int = -1  # iteration whose policy was returned, -1 = initial
    stopped_by: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, path) -> None:
        cols = ["iter", "best", "threshold", "elite_mean", "best_so_far", "unsuccessful"]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.iteration, r.best, r.threshold, repr(r.elite_mean),
                            r.best_so_far, r.unsuccessful])


@dataclass
class Summary:
    mean: float
    min: float
    max: float
    std: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def elite_size(n: int, rho: float) -> int:
    # round away float noise before the ceiling: 0.3 * 10 must give 3
    return max(1, min(n, math.ceil(round(rho * n, 9))))


def select_elite(rewards, rho: float) -> np.ndarray:
    """Indices of the ``ceil(rho * N)`` best rewards, ties to the lower index.

    >>> select_elite([3, 1, 2, 3], 0.5).tolist()
    [0, 3]
    """
    rewards = np.asarray(rewards)
    if rewards.size == 0:
        raise ValueError("cannot select from an empty batch")
    k = elite_size(len(rewards), rho)
    order = np.argsort(-rewards, kind="stable")
    return np.sort(order[:k])


def summarize(rewards) -> Summary:
    r = np.asarray(rewards, dtype=np.float64)
    return Summary(float(r.mean()), float(r.min()), float(r.max()), float(r.std()), len(r))


def evaluate(env, h: HhmmPolicy, n: int, seed: int, workers: int = 1) -> Summary:
    batch = batch_rollouts(env, h, n, seed, workers=workers, record_states=False)
    return summarize(batch.rewards)


def mix_policies(old: HhmmPolicy, new: HhmmPolicy, step: float) -> HhmmPolicy:
    """Convex combination ``step * new + (1 - step) * old``, table by table."""
    tables = tuple(step * b + (1.0 - step) * a for a, b in zip(old.tables, new.tables))
    return HhmmPolicy(old.level_sizes, tables, old.n_obs, old.n_actions)


def optimize(env, level_sizes, config: CeConfig,
             callback: Callable[[int, HhmmPolicy, IterationRecord], None] | None = None,
             initial: HhmmPolicy | None = None) -> tuple[HhmmPolicy, CeHistory]:
    """Run the CE loop from a flat policy (or ``initial``).

    ``callback(iteration, policy, record)`` is called after every update.
    """
    env = as_env(env)
    h = initial if initial is not None else flat_init(level_sizes, env.n_obs, env.n_actions)
    history = CeHistory()
    if config.max_iterations == 0:
        history.stopped_by = "max_iterations"
        return h, history

    best_policy, best_score = h, -math.inf
    best_key = (-math.inf, -math.inf)
    unsuccessful = 0
    for it in range(config.max_iterations):
        batch = batch_rollouts(env, h, config.n_samples, derive_seed(config.seed, _TRAIN, it),
                               workers=config.workers, record_states=False)
        rewards = batch.rewards
        # this batch is an unbiased evaluation of the policy that generated it
        score = float(rewards.mean())
        history.checkpoint_scores.append(score)
        if score > best_score:
            best_policy, best_score, history.selected = h, score, it - 1

        elite = select_elite(rewards, config.rho)
        threshold = int(rewards[elite].min())
        elite_mean = float(rewards[elite].mean())
        fitted = ce_update(h, batch.actions[elite], batch.obs[elite], batch.memories[elite],
                           config.smoothing)
        h = fitted if config.step_size == 1.0 else mix_policies(h, fitted, config.step_size)

        if (threshold, elite_mean) > best_key:
            best_key, unsuccessful = (threshold, elite_mean), 0
        else:
            unsuccessful += 1
        rec = IterationRecord(it, int(rewards.max()), threshold, elite_mean,
                              int(best_key[0]), unsuccessful, score)
        history.records.append(rec)
        log.debug("iter %d: mean %.2f threshold %d elite %.2f unsuccessful %d",
                  it, score, threshold, rec.elite_mean, unsuccessful)
        if callback is not None:
            callback(it, h, rec)
        if unsuccessful >= config.patience:
            history.stopped_by = "criterion"
            break
    else:
        history.stopped_by = "max_iterations"

    final = evaluate(env, h, config.n_samples, derive_seed(config.seed, _EVAL),
                     workers=config.workers).mean
    history.checkpoint_scores.append(final)
    if final > best_score:
        best_policy, history.selected = h, len(history.records) - 1
    log.info("stopped after %d iterations (%s); returning checkpoint %d",
             len(history), history.stopped_by, history.selected)
    return best_policy, history
