"""Experiment configuration: YAML in, validated model out.

Unknown keys are rejected. Validation errors carry the dotted key and, when
the key appears in the file, its line number.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

__all__ = ["EXPERIMENTS", "DEFAULT_REPLICAS", "ConfigError", "ExperimentConfig", "parse_config", "load_config"]

EXPERIMENTS = (
    "survival-tail",
    "estimate-k",
    "sample-yaglom",
    "qsd-check",
    "scaling-sweep",
    "coupling-check",
    "moments-check",
    "analytic-tables",
)

# pre-registered replica counts; see the README for what each one means
DEFAULT_REPLICAS = {
    "survival-tail": 2_000_000,
    "estimate-k": 10_000,
    "sample-yaglom": 1_000,
    "qsd-check": 10_000,
    "scaling-sweep": 100,
    "coupling-check": 1_000,
    "moments-check": 100_000,
    "analytic-tables": 1,
}

Experiment = Literal[
    "survival-tail", "estimate-k", "sample-yaglom", "qsd-check",
    "scaling-sweep", "coupling-check", "moments-check", "analytic-tables",
]


class ConfigError(ValueError):
    """Invalid configuration file; the message names the key and line."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ParamsModel(_Strict):
    rho: float = Field(2.0, ge=0)
    max_population: int = Field(10_000_000, ge=1)
    crossing_dt: float = Field(1e-3, gt=0)


class SpineModel(_Strict):
    budget: float = Field(1e-4, gt=0, lt=1)
    max_particles: int = Field(2_000_000, ge=1)
    particle_cut: float = Field(1e-10, ge=0)
    max_attempts: int = Field(1_000_000, ge=1)
    chunk: int = Field(1000, ge=1)


class QsdModel(_Strict):
    s: float = Field(0.5, gt=0)
    forward_x: float = Field(1.0, gt=0)
    forward_t: float = Field(8.0, gt=0)
    min_survivors: int = Field(500, ge=1)
    forward_round: int = Field(20_000_000, ge=1)
    forward_max: int = Field(2_000_000_000, ge=1)


class ScalingModel(_Strict):
    max_proposals: int = Field(50_000, ge=1)


class CouplingModel(_Strict):
    rho: float = Field(2.0, gt=math.sqrt(2.0))
    delta: float = Field(1.0, gt=0)
    horizon: float = Field(6.0, gt=0)
    init: list[float] = Field(default_factory=lambda: [0.5, 1.5, 2.5], min_length=1)
    snapshots: int = Field(25, ge=2)

    @field_validator("init")
    @classmethod
    def _positive(cls, v):
        if any(not x > 0 for x in v):
            raise ValueError("initial positions must be positive")
        return v


class MomentsModel(_Strict):
    rho: float = Field(math.sqrt(2.0), ge=math.sqrt(2.0))
    t: float = Field(50.0, gt=0)
    s: float = Field(10.0, gt=0)
    x_frac: float = Field(0.5, gt=0, lt=1)


class TablesModel(_Strict):
    t: float = Field(8.0, gt=0)
    points: int = Field(17, ge=2)
    rho: float = Field(2.0, ge=0)


class ExperimentConfig(_Strict):
    """Validated experiment settings.

    ``replicas`` left unset means the per-experiment default in
    ``DEFAULT_REPLICAS``.
    """

    experiment: Optional[Experiment] = None
    seed: int = Field(0, ge=0)
    replicas: Optional[int] = Field(None, ge=1)
    threads: int = Field(1, ge=1)
    output_dir: str = "results"
    params: ParamsModel = Field(default_factory=ParamsModel)
    spine: SpineModel = Field(default_factory=SpineModel)
    x: float = Field(1.0, gt=0)
    t_grid: list[float] = Field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0], min_length=1)
    eps_list: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05], min_length=1)
    qsd: QsdModel = Field(default_factory=QsdModel)
    scaling: ScalingModel = Field(default_factory=ScalingModel)
    coupling: CouplingModel = Field(default_factory=CouplingModel)
    moments: MomentsModel = Field(default_factory=MomentsModel)
    tables: TablesModel = Field(default_factory=TablesModel)

    @field_validator("t_grid")
    @classmethod
    def _increasing(cls, v):
        if v[0] <= 0 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("t_grid must be positive and strictly increasing")
        return v

    @field_validator("eps_list")
    @classmethod
    def _eps_positive(cls, v):
        if any(not e > 0 for e in v):
            raise ValueError("eps_list entries must be strictly positive")
        if len(set(v)) != len(v):
            raise ValueError("eps_list entries must be distinct")
        return v

    def n_replicas(self, experiment: str | None = None) -> int:
        name = experiment or self.experiment
        return self.replicas if self.replicas is not None else DEFAULT_REPLICAS[name]

    def echo(self) -> dict:
        """The settings that determine outputs (no threads, no output path)."""
        return self.model_dump(mode="json", exclude={"threads", "output_dir"})


def _key_line(node, loc) -> int | None:
    """Line (1-based) of the key at ``loc`` in a composed YAML tree."""
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == key:
                    line = k.start_mark.line + 1
                    node = v
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def _format(err: ValidationError, root, source: str) -> str:
    msgs = []
    for e in err.errors():
        loc = e["loc"]
        key = ".".join(str(p) for p in loc) or "<root>"
        line = _key_line(root, loc) if root is not None else None
        where = f"{source}:{line}" if line else source
        msg = "unknown key" if e["type"] == "extra_forbidden" else e["msg"]
        msgs.append(f"{where}: {key}: {msg}")
    return "\n".join(msgs)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Validate YAML text. Raises ``ConfigError`` naming key and line."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format(exc, root, source)) from None


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: no such file")
    return parse_config(p.read_text(), str(p))
