"""Experiment configuration files.

A configuration is one YAML document with the sections ``scenario``,
``policy``, ``ce``, ``qlearning``, ``evaluation``, ``output`` and ``sweep``.
Every section and key is optional and falls back to its default; a key that
is not recognised, or a value the owning module would reject, is an error
whose message starts with the dotted key, e.g. ``ce.rho: ...``.
"""
from __future__ import annotations

import copy
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .grid_world import Case, Scenario
from .optimizer import CeConfig, parse_criterion
from .qlearning import QHyper


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 wants a dot in floats; also accept 1e-3 and friends
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


# reward of the best known controller, used for percentage reporting
REFERENCE_OPTIMA = {Case.FIXED: 85.0, Case.FULL: 69.0}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the culprit."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ScenarioSection:
    case: str = "case3"
    horizon: int = 100
    radius: int = 3
    width: int = 20
    height: int = 20


@dataclass
class PolicySection:
    levels: list = field(default_factory=lambda: [16, 16])
    smoothing: float = 1e-3


@dataclass
class CeSection:
    n_samples: int = 1000
    rho: float = 0.5
    criterion: object = "weak"
    max_iterations: int = 5000
    seed: int = 0
    workers: int = 1
    step_size: float = 1.0


@dataclass
class QSection:
    steps: int = 1_000_000
    alpha: float = 0.1
    gamma: float = 0.99
    epsilon: float | None = None
    seed: int = 0
    restart_every: int | None = None
    initial_value: float = 0.0
    memory_budget_mb: float = 2048.0
    windows: int = 1000
    warmup: int = 10_000


@dataclass
class EvaluationSection:
    episodes: int = 1000
    seed: int = 12345
    reference: float | None = None  # None: the known optimum of the case, if any


@dataclass
class OutputSection:
    dir: str = "results"
    policy: str = "policy.json"
    history: str = "history.csv"
    results: str = "results.json"
    episodes: str | None = None
    trajectory: str = "trajectory.csv"
    qtable: str = "qtable.bin"
    sweep: str = "sweep"


@dataclass
class SweepSection:
    levels: list = field(default_factory=list)
    criteria: list = field(default_factory=lambda: ["weak"])


_SECTIONS = {
    "scenario": ScenarioSection,
    "policy": PolicySection,
    "ce": CeSection,
    "qlearning": QSection,
    "evaluation": EvaluationSection,
    "output": OutputSection,
    "sweep": SweepSection,
}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _need(key, ok, what):
    if not ok:
        raise ConfigError(key, what)


def _check_levels(key, levels):
    _need(key, isinstance(levels, list) and len(levels) >= 1
          and all(_is_int(m) and m >= 1 for m in levels),
          f"expected a non-empty list of positive integers, got {levels!r}")


@dataclass
class ExperimentConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    policy: PolicySection = field(default_factory=PolicySection)
    ce: CeSection = field(default_factory=CeSection)
    qlearning: QSection = field(default_factory=QSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output: OutputSection = field(default_factory=OutputSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        self.validate()

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "expected a mapping of sections")
        sections = {}
        for name, body in doc.items():
            if name not in _SECTIONS:
                raise ConfigError(str(name), "unknown section")
            body = {} if body is None else body
            if not isinstance(body, dict):
                raise ConfigError(name, "expected a mapping")
            known = {f.name for f in fields(_SECTIONS[name])}
            for key in body:
                if key not in known:
                    raise ConfigError(f"{name}.{key}", "unknown key")
            sections[name] = _SECTIONS[name](**copy.deepcopy(body))
        return cls(**sections)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            doc = yaml.load(text, Loader=_Loader)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML ({exc})") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        s = self.scenario
        try:
            Case.parse(s.case)
        except ValueError as exc:
            raise ConfigError("scenario.case", str(exc)) from None
        for key in ("horizon", "width", "height"):
            v = getattr(s, key)
            _need(f"scenario.{key}", _is_int(v) and v >= 1, f"expected a positive integer, got {v!r}")
        _need("scenario.radius", _is_int(s.radius) and s.radius >= 0,
              f"expected a non-negative integer, got {s.radius!r}")
        try:
            self.make_scenario()
        except ValueError as exc:
            raise ConfigError("scenario.height", str(exc)) from None

        _check_levels("policy.levels", self.policy.levels)
        _need("policy.smoothing", _is_real(self.policy.smoothing) and self.policy.smoothing >= 0,
              f"expected a real >= 0, got {self.policy.smoothing!r}")

        c = self.ce
        _need("ce.n_samples", _is_int(c.n_samples) and c.n_samples >= 1,
              f"expected a positive integer, got {c.n_samples!r}")
        _need("ce.rho", _is_real(c.rho) and 0 < c.rho < 1, f"must lie in (0, 1), got {c.rho!r}")
        self._check_criterion("ce.criterion", c.criterion)
        _need("ce.max_iterations", _is_int(c.max_iterations) and c.max_iterations >= 0,
              f"expected an integer >= 0, got {c.max_iterations!r}")
        _need("ce.seed", _is_int(c.seed) and c.seed >= 0, f"expected an integer >= 0, got {c.seed!r}")
        _need("ce.workers", _is_int(c.workers) and c.workers >= 1,
              f"expected a positive integer, got {c.workers!r}")
        _need("ce.step_size", _is_real(c.step_size) and 0 < c.step_size <= 1,
              f"must lie in (0, 1], got {c.step_size!r}")

        q = self.qlearning
        _need("qlearning.steps", _is_int(q.steps) and q.steps >= 1,
              f"expected a positive integer, got {q.steps!r}")
        _need("qlearning.alpha", _is_real(q.alpha) and 0 < q.alpha <= 1,
              f"must lie in (0, 1], got {q.alpha!r}")
        _need("qlearning.gamma", _is_real(q.gamma) and 0 <= q.gamma < 1,
              f"must lie in [0, 1), got {q.gamma!r}")
        _need("qlearning.epsilon", q.epsilon is None or (_is_real(q.epsilon) and 0 <= q.epsilon <= 1),
              f"must be null (1/ln t schedule) or lie in [0, 1], got {q.epsilon!r}")
        _need("qlearning.seed", _is_int(q.seed) and q.seed >= 0, f"expected an integer >= 0, got {q.seed!r}")
        _need("qlearning.restart_every",
              q.restart_every is None or (_is_int(q.restart_every) and q.restart_every >= 1),
              f"must be null or a positive integer, got {q.restart_every!r}")
        _need("qlearning.initial_value", _is_real(q.initial_value),
              f"expected a real, got {q.initial_value!r}")
        _need("qlearning.memory_budget_mb", _is_real(q.memory_budget_mb) and q.memory_budget_mb > 0,
              f"expected a positive real, got {q.memory_budget_mb!r}")
        _need("qlearning.windows", _is_int(q.windows) and q.windows >= 1,
              f"expected a positive integer, got {q.windows!r}")
        _need("qlearning.warmup", _is_int(q.warmup) and q.warmup >= 0,
              f"expected an integer >= 0, got {q.warmup!r}")

        e = self.evaluation
        _need("evaluation.episodes", _is_int(e.episodes) and e.episodes >= 1,
              f"expected a positive integer, got {e.episodes!r}")
        _need("evaluation.seed", _is_int(e.seed) and e.seed >= 0,
              f"expected an integer >= 0, got {e.seed!r}")
        _need("evaluation.reference", e.reference is None or (_is_real(e.reference) and e.reference > 0),
              f"must be null or a positive real, got {e.reference!r}")

        for f in fields(OutputSection):
            v = getattr(self.output, f.name)
            optional = f.name == "episodes"
            _need(f"output.{f.name}", (optional and v is None) or (isinstance(v, str) and v),
                  f"expected a non-empty path, got {v!r}")

        _need("sweep.levels", isinstance(self.sweep.levels, list), "expected a list of level lists")
        for k, levels in enumerate(self.sweep.levels):
            _check_levels(f"sweep.levels[{k}]", levels)
        _need("sweep.criteria", isinstance(self.sweep.criteria, list), "expected a list of criteria")
        for k, crit in enumerate(self.sweep.criteria):
            self._check_criterion(f"sweep.criteria[{k}]", crit)

    @staticmethod
    def _check_criterion(key, value):
        try:
            parse_criterion(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, str(exc)) from None

    # -- module objects ------------------------------------------------------

    @property
    def case(self) -> Case:
        return Case.parse(self.scenario.case)

    def make_scenario(self) -> Scenario:
        s = self.scenario
        return Scenario(Case.parse(s.case), s.horizon, s.radius, s.width, s.height)

    def make_ce(self, criterion=None, seed: int | None = None) -> CeConfig:
        c = self.ce
        return CeConfig(n_samples=c.n_samples, rho=c.rho, smoothing=self.policy.smoothing,
                        criterion=c.criterion if criterion is None else criterion,
                        max_iterations=c.max_iterations,
                        seed=c.seed if seed is None else seed,
                        workers=c.workers, step_size=c.step_size)

    def make_qhyper(self) -> QHyper:
        q = self.qlearning
        return QHyper(q.alpha, q.gamma, q.epsilon)

    @property
    def reference(self) -> float | None:
        if self.evaluation.reference is not None:
            return float(self.evaluation.reference)
        return REFERENCE_OPTIMA.get(self.case)

    @property
    def memory_budget_bytes(self) -> int:
        return int(self.qlearning.memory_budget_mb * 2**20)
