"""Problem canvas and run configuration.

The canvas is the human-edited document that grounds a research run: what the
problem is, the contract of the function being evolved, and how candidates are
evaluated. Both the canvas and the run config are flat YAML documents so they
stay easy to edit and diff by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

CODE_PLACEHOLDER = "{code}"
CALLBACKS_PLACEHOLDER = "{callbacks}"

#: Sampling-temperature sentinel: every candidate equally likely.
UNIFORM_TEMPERATURE = math.inf


class CanvasError(Exception):
    """Base class for canvas/config loading failures."""


class ParseError(CanvasError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class MissingField(CanvasError):
    def __init__(self, name: str):
        super().__init__(f"missing required field: {name}")
        self.name = name


class MalformedPlaceholder(CanvasError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidValue(CanvasError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


@dataclass(frozen=True)
class SolutionSeed:
    idea: str
    code: str


@dataclass(frozen=True)
class ProblemSpec:
    """Validated problem specification (the research canvas)."""

    problem_description: str
    function_description: str
    evaluation_command: str
    evaluation_description: str
    callbacks_description: str | None = None
    seed_solution: SolutionSeed | None = None

    def validate(self) -> None:
        for name in ("problem_description", "function_description", "evaluation_command"):
            if not getattr(self, name).strip():
                raise MissingField(name)
        n_code = self.evaluation_command.count(CODE_PLACEHOLDER)
        if n_code != 1:
            raise MalformedPlaceholder(
                f"evaluation_command must contain {CODE_PLACEHOLDER} exactly once, found {n_code}"
            )
        has_cb_slot = CALLBACKS_PLACEHOLDER in self.evaluation_command
        if has_cb_slot and self.callbacks_description is None:
            raise MalformedPlaceholder(
                f"evaluation_command uses {CALLBACKS_PLACEHOLDER} but callbacks_description is absent"
            )
        if self.callbacks_description is not None and not has_cb_slot:
            raise MalformedPlaceholder(
                f"callbacks_description given but evaluation_command has no {CALLBACKS_PLACEHOLDER}"
            )

    @property
    def uses_callbacks(self) -> bool:
        return self.callbacks_description is not None


_CANVAS_REQUIRED = (
    "problem_description",
    "function_description",
    "evaluation_command",
    "evaluation_description",
)
_CANVAS_OPTIONAL = ("callbacks_description", "seed_idea", "seed_code")


def _load_yaml_mapping(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"invalid YAML{where}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ParseError(f"expected a mapping at top level, got {type(data).__name__}")
    return data


def load_problem_spec(path: str | Path) -> ProblemSpec:
    """Load and validate a canvas file."""
    data = _load_yaml_mapping(path)
    for key in data:
        if key not in _CANVAS_REQUIRED and key not in _CANVAS_OPTIONAL:
            raise ParseError(f"unexpected canvas field: {key!r}")
    for key in _CANVAS_REQUIRED:
        if key not in data:
            raise MissingField(key)
    for key, value in data.items():
        if not isinstance(value, str):
            raise ParseError(f"canvas field {key!r} must be text")

    seed_idea = data.get("seed_idea")
    seed_code = data.get("seed_code")
    if (seed_idea is None) != (seed_code is None):
        raise MissingField("seed_code" if seed_code is None else "seed_idea")
    seed = SolutionSeed(idea=seed_idea, code=seed_code) if seed_idea is not None else None

    spec = ProblemSpec(
        problem_description=data["problem_description"],
        function_description=data["function_description"],
        evaluation_command=data["evaluation_command"],
        evaluation_description=data["evaluation_description"],
        callbacks_description=data.get("callbacks_description"),
        seed_solution=seed,
    )
    spec.validate()
    return spec


def save_problem_spec(spec: ProblemSpec, path: str | Path) -> None:
    data: dict = {
        "problem_description": spec.problem_description,
        "function_description": spec.function_description,
        "evaluation_command": spec.evaluation_command,
        "evaluation_description": spec.evaluation_description,
    }
    if spec.callbacks_description is not None:
        data["callbacks_description"] = spec.callbacks_description
    if spec.seed_solution is not None:
        data["seed_idea"] = spec.seed_solution.idea
        data["seed_code"] = spec.seed_solution.code
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False, allow_unicode=True))


#: Context given to idea generation when expanding a node.
CONTEXT_SCOPES = ("parent_only", "ancestry", "full_tree")


@dataclass(frozen=True)
class RunConfig:
    """Engine knobs. Every field has a documented default; a config file only
    needs the fields it overrides."""

    max_children: int = 3
    max_depth: int = 4
    elite_extra_children: int = 1
    improvement_grace_depth: int = 1
    base_experiment_repeats: int = 5
    budget_llm_calls: int = 200
    budget_evaluations: int = 100
    sampling_temperature: float = 1.0  # UNIFORM_TEMPERATURE for equal odds
    context_scope: str = "full_tree"
    ltm_refresh_interval: int = 3
    ltm_word_budget: int | None = None  # None = unlimited
    ltm_persist_across_rounds: bool = True
    summary_interval: int = 4
    log_head_lines: int = 50
    log_tail_lines: int = 50
    eval_timeout: float = 300.0
    num_lead_agents: int = 1
    crossover_rate: float = 0.3

    def validate(self) -> None:
        positive_ints = (
            "max_children",
            "max_depth",
            "base_experiment_repeats",
            "budget_llm_calls",
            "budget_evaluations",
            "ltm_refresh_interval",
            "summary_interval",
            "log_head_lines",
            "log_tail_lines",
            "num_lead_agents",
        )
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise InvalidValue(name, "must be >= 1")
        for name in ("elite_extra_children", "improvement_grace_depth"):
            if getattr(self, name) < 0:
                raise InvalidValue(name, "must be >= 0")
        if self.improvement_grace_depth > self.max_depth:
            raise InvalidValue("improvement_grace_depth", "must be <= max_depth")
        if self.log_head_lines + self.log_tail_lines < 2:
            raise InvalidValue("log_head_lines", "head + tail must be >= 2")
        if not self.sampling_temperature > 0:
            raise InvalidValue("sampling_temperature", "must be > 0 or 'uniform'")
        if self.context_scope not in CONTEXT_SCOPES:
            raise InvalidValue("context_scope", f"must be one of {CONTEXT_SCOPES}")
        if self.ltm_word_budget is not None and self.ltm_word_budget < 1:
            raise InvalidValue("ltm_word_budget", "must be >= 1 or 'unlimited'")
        if not self.eval_timeout > 0:
            raise InvalidValue("eval_timeout", "must be > 0")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise InvalidValue("crossover_rate", "must be in [0, 1]")


_INT_FIELDS = {
    "max_children",
    "max_depth",
    "elite_extra_children",
    "improvement_grace_depth",
    "base_experiment_repeats",
    "budget_llm_calls",
    "budget_evaluations",
    "ltm_refresh_interval",
    "summary_interval",
    "log_head_lines",
    "log_tail_lines",
    "num_lead_agents",
}
_FLOAT_FIELDS = {"eval_timeout", "crossover_rate"}
_BOOL_FIELDS = {"ltm_persist_across_rounds"}


def _coerce_config_value(name: str, value):
    if name == "sampling_temperature":
        if value == "uniform":
            return UNIFORM_TEMPERATURE
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise InvalidValue(name, "must be a positive number or 'uniform'")
    if name == "ltm_word_budget":
        if value == "unlimited" or value is None:
            return None
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise InvalidValue(name, "must be an integer or 'unlimited'")
    if name == "context_scope":
        if not isinstance(value, str):
            raise InvalidValue(name, "must be text")
        return value
    if name in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise InvalidValue(name, "must be true or false")
        return value
    if name in _INT_FIELDS:
        if not isinstance(value, int) or isinstance(value, bool):
            raise InvalidValue(name, "must be an integer")
        return value
    if name in _FLOAT_FIELDS:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise InvalidValue(name, "must be a number")
        return float(value)
    raise InvalidValue(name, "unknown field")


def load_run_config(path: str | Path) -> RunConfig:
    """Load a config file, filling absent fields from the defaults."""
    data = _load_yaml_mapping(path)
    known = {f.name for f in fields(RunConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise InvalidValue(key, "unknown field")
        kwargs[key] = _coerce_config_value(key, value)
    config = RunConfig(**kwargs)
    config.validate()
    return config


def save_run_config(config: RunConfig, path: str | Path) -> None:
    data = {}
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if f.name == "sampling_temperature" and value == UNIFORM_TEMPERATURE:
            value = "uniform"
        if f.name == "ltm_word_budget" and value is None:
            value = "unlimited"
        data[f.name] = value
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))
