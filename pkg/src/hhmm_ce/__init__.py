"""Cross-entropy training of hierarchical finite-memory policies (HHMM
controllers) for a two-pursuer grid benchmark, with a tabular Q-learning
baseline and a command-line harness."""
from .grid_world import Case, PursuitEnv, Scenario
from .optimizer import CeConfig, evaluate, optimize
from .policy import HhmmPolicy, flat_init, load_policy, param_count, save_policy
from .rollout import batch_rollouts, run_episode

__version__ = "0.1.0"

__all__ = [
    "Case", "CeConfig", "HhmmPolicy", "PursuitEnv", "Scenario", "batch_rollouts",
    "evaluate", "flat_init", "load_policy", "optimize", "param_count", "run_episode",
    "save_policy",
]
