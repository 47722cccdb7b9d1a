"""Command-line front end.

    hhmm-ce train       --config C [--seed S] [--out DIR]
    hhmm-ce eval        --config C --policy P [--seed S] [--out DIR]
    hhmm-ce replay      --config C --policy P [--seed S] [--out DIR]
    hhmm-ce sweep       --config C [--seed S] [--out DIR]
    hhmm-ce qtrain      --config C [--seed S] [--out DIR]
    hhmm-ce qeval       --config C --policy Q [--seed S] [--out DIR]
    hhmm-ce param-count [--config C] [M1 M2 ...]

Exit status is 0 on success, 1 when some sweep cells failed and 2 for
invalid input (configuration, policy file, memory budget).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .optimizer import evaluate, optimize
from .policy import PolicyFormatError, load_policy, param_count, save_policy
from .qlearning import (
    MemoryBudgetError, PursuitQEnv, SnapshotError, check_budget, evaluate_q_windows,
    load_qtable, save_qtable, train_q,
)
from .rollout import batch_rollouts, run_episode, write_trajectory_csv
from .streams import Stream

log = logging.getLogger("hhmm_ce")

SWEEP_COLUMNS = ["levels", "criterion", "param_count", "iterations", "mean_reward",
                 "percent", "status"]
EPISODE_COLUMNS = ["episode", "reward"]
WINDOW_COLUMNS = ["mode", "worst", "mean", "best", "worst_pct", "mean_pct", "best_pct"]


class UsageError(Exception):
    pass


def percent(value: float, reference: float | None) -> int | None:
    """``value`` as a whole percentage of ``reference``, halves rounded up."""
    if reference is None:
        return None
    return int(math.floor(100.0 * value / reference + 0.5))


def _pct_text(p: int | None) -> str:
    return "n/a" if p is None else f"{p}%"


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _levels_text(levels) -> str:
    return "[" + ",".join(str(m) for m in levels) + "]"


def aligned(rows: list[list], header: list[str]) -> str:
    cells = [header] + [["" if v is None else str(v) for v in row] for row in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip()
                     for r in cells) + "\n"


# --------------------------------------------------------------------------
# commands


def cmd_train(cfg: ExperimentConfig, args) -> int:
    sc = cfg.make_scenario()
    levels = cfg.policy.levels
    ce = cfg.make_ce(seed=args.seed)
    out = _out_dir(cfg, args)
    print(f"{sc.case.value} levels {_levels_text(levels)} ({param_count(levels)} parameters)")
    h, hist = optimize(sc, levels, ce)
    save_policy(h, out / cfg.output.policy, smoothing=ce.smoothing)
    hist.write_csv(out / cfg.output.history)
    s = evaluate(sc, h, cfg.evaluation.episodes, cfg.evaluation.seed, workers=ce.workers)
    pct = percent(s.mean, cfg.reference)
    print(f"iterations {len(hist)} (stopped by {hist.stopped_by}), "
          f"returned checkpoint {hist.selected}")
    print(f"mean reward {s.mean:.2f} over {s.n} episodes "
          f"(min {s.min:g}, max {s.max:g}, std {s.std:.2f})")
    print(f"reference {cfg.reference}: {_pct_text(pct)}")
    _write_json(out / cfg.output.results, {
        "command": "train", "case": sc.case.value, "levels": list(levels),
        "param_count": param_count(levels), "iterations": len(hist),
        "stopped_by": hist.stopped_by, "selected": hist.selected, **s.as_dict(),
        "reference": cfg.reference, "percent": pct,
    })
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    h = load_policy(_require_policy(args))
    sc = cfg.make_scenario()
    seed = cfg.evaluation.seed if args.seed is None else args.seed
    out = _out_dir(cfg, args)
    batch = batch_rollouts(sc, h, cfg.evaluation.episodes, seed, workers=cfg.ce.workers,
                           record_states=False)
    rewards = batch.rewards
    mean, std = float(rewards.mean()), float(rewards.std())
    pct = percent(mean, cfg.reference)
    print(f"mean reward {mean:.2f} over {len(rewards)} episodes "
          f"(min {rewards.min()}, max {rewards.max()}, std {std:.2f})")
    print(f"reference {cfg.reference}: {_pct_text(pct)}")
    if cfg.output.episodes:
        with open(out / cfg.output.episodes, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(EPISODE_COLUMNS)
            w.writerows(enumerate(rewards.tolist()))
    _write_json(out / cfg.output.results, {
        "command": "eval", "case": sc.case.value, "levels": list(h.level_sizes),
        "mean": mean, "min": float(rewards.min()), "max": float(rewards.max()), "std": std,
        "n": len(rewards), "seed": seed, "reference": cfg.reference, "percent": pct,
    })
    return 0


def cmd_replay(cfg: ExperimentConfig, args) -> int:
    h = load_policy(_require_policy(args))
    seed = cfg.evaluation.seed if args.seed is None else args.seed
    traj = run_episode(cfg.make_scenario(), h, Stream(seed, 0))
    path = _out_dir(cfg, args) / cfg.output.trajectory
    write_trajectory_csv(traj, path)
    print(f"reward {traj.reward} over {traj.horizon} steps -> {path}")
    return 0


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    sc = cfg.make_scenario()
    out = _out_dir(cfg, args)
    rows, failed = [], 0
    for levels in cfg.sweep.levels:
        for crit in cfg.sweep.criteria:
            row = [_levels_text(levels), crit, param_count(levels)]
            try:
                h, hist = optimize(sc, levels, cfg.make_ce(criterion=crit, seed=args.seed))
                s = evaluate(sc, h, cfg.evaluation.episodes, cfg.evaluation.seed,
                             workers=cfg.ce.workers)
                row += [len(hist), f"{s.mean:.2f}", percent(s.mean, cfg.reference), "ok"]
            except Exception as exc:  # one broken cell must not sink the sweep
                failed += 1
                log.error("cell %s/%s failed: %s", row[0], crit, exc)
                row += [None, None, None, f"failed: {exc}"]
            rows.append(row)
            log.info("sweep cell %s", row)
    stem = out / cfg.output.sweep
    with open(stem.with_suffix(".csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_COLUMNS)
        w.writerows([["" if v is None else v for v in r] for r in rows])
    text = aligned(rows, SWEEP_COLUMNS)
    stem.with_suffix(".txt").write_text(text)
    print(text, end="")
    return 1 if failed else 0


def _window_rows(q, env, cfg, seed) -> list[list]:
    rows = []
    for mode in ("fresh", "continuation"):
        st = evaluate_q_windows(q, env, cfg.qlearning.windows, seed, mode=mode,
                                warmup=cfg.qlearning.warmup)
        vals = [st.worst, round(st.mean, 2), st.best]
        rows.append([mode, *vals, *(percent(v, cfg.reference) for v in vals)])
    return rows


def _report_windows(rows, out: Path, cfg: ExperimentConfig) -> None:
    with open(out / "qwindows.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(WINDOW_COLUMNS)
        w.writerows([["" if v is None else v for v in r] for r in rows])
    print(aligned(rows, WINDOW_COLUMNS), end="")


def cmd_qtrain(cfg: ExperimentConfig, args) -> int:
    env = PursuitQEnv(cfg.make_scenario())
    size = check_budget(env, cfg.memory_budget_bytes)
    print(f"Q table: {env.n_states} states x {env.n_actions} actions, "
          f"float32, {size} bytes ({size / 1e9:.2f} GB)")
    q_cfg = cfg.qlearning
    seed = q_cfg.seed if args.seed is None else args.seed
    q = train_q(env, q_cfg.steps, cfg.make_qhyper(), seed=seed,
                restart_every=q_cfg.restart_every, initial_value=q_cfg.initial_value,
                budget_bytes=cfg.memory_budget_bytes)
    out = _out_dir(cfg, args)
    save_qtable(q, out / cfg.output.qtable)
    _report_windows(_window_rows(q, env, cfg, cfg.evaluation.seed), out, cfg)
    return 0


def cmd_qeval(cfg: ExperimentConfig, args) -> int:
    env = PursuitQEnv(cfg.make_scenario())
    q = load_qtable(_require_policy(args), cfg.make_qhyper())
    if q.dims != env.dims or q.n_states != env.n_states:
        raise SnapshotError(f"table is for a {q.dims[0]}x{q.dims[1]} grid, "
                            f"config asks for {env.dims[0]}x{env.dims[1]}")
    seed = cfg.evaluation.seed if args.seed is None else args.seed
    _report_windows(_window_rows(q, env, cfg, seed), _out_dir(cfg, args), cfg)
    return 0


def cmd_param_count(cfg: ExperimentConfig | None, args) -> int:
    if args.levels:
        levels = args.levels
    elif cfg is not None:
        levels = cfg.policy.levels
    else:
        raise UsageError("param-count needs level sizes or --config")
    if any(m < 1 for m in levels):
        raise UsageError("level sizes must be positive")
    print(param_count(levels))
    return 0


def _require_policy(args) -> str:
    if not args.policy:
        raise UsageError(f"{args.command} needs --policy")
    return args.policy


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "replay": cmd_replay,
    "sweep": cmd_sweep,
    "qtrain": cmd_qtrain,
    "qeval": cmd_qeval,
    "param-count": cmd_param_count,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hhmm-ce",
                                description="CE training of hierarchical finite-memory "
                                            "policies on the pursuit benchmark")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "param-count")
        sp.add_argument("--policy")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        if name == "param-count":
            sp.add_argument("levels", nargs="*", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else None
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be >= 0")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
    except PolicyFormatError as exc:
        print(f"invalid policy file: {exc}", file=sys.stderr)
    except SnapshotError as exc:
        print(f"invalid Q-table file: {exc}", file=sys.stderr)
    except MemoryBudgetError as exc:
        print(f"refusing to allocate: {exc}", file=sys.stderr)
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
