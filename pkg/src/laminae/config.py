"""Pipeline configuration: defaults, JSON loading, dotted-path overrides.

Every stage parameter lives in one nested frozen config.  The defaults here
are the reference values used throughout the test suite; a JSON config file
may override any subset, and ``--set section.key=value`` assignments are
applied on top of that.  Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .embed import ContrastiveConfig
from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class FeatureSettings:
    thresholds: tuple[float, ...] = (50.0, 100.0, 200.0)
    nn_stats_k: int = 10
    shape_seed: int = 0
    include_laplace: bool = True

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(r) for r in self.thresholds))
        if not self.thresholds or any(r <= 0 for r in self.thresholds):
            raise ValidationError("thresholds must be positive radii")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ValidationError("thresholds must be ascending")
        if self.nn_stats_k < 1:
            raise ValidationError("nn_stats_k must be >= 1")


@dataclass(frozen=True)
class LaplaceSettings:
    tol: float = 1e-6
    max_iters: int = 50_000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValidationError("laplace tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("laplace max_iters must be >= 1")


@dataclass(frozen=True)
class ClusterSettings:
    n_neighbors: int = 15
    target_k: int = 5
    gamma_min: float = 0.1
    gamma_max: float = 3.0
    gamma_steps: int = 30
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValidationError("n_neighbors must be >= 1")
        if self.target_k < 1:
            raise ValidationError("target_k must be >= 1")
        if not 0 < self.gamma_min <= self.gamma_max:
            raise ValidationError("need 0 < gamma_min <= gamma_max")
        if self.gamma_steps < 1:
            raise ValidationError("gamma_steps must be >= 1")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    knn_k: int = 10
    features: FeatureSettings = field(default_factory=FeatureSettings)
    laplace: LaplaceSettings = field(default_factory=LaplaceSettings)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    cluster: ClusterSettings = field(default_factory=ClusterSettings)

    def __post_init__(self):
        if self.knn_k < 1:
            raise ValidationError("knn_k must be >= 1")


_GROUPS = {
    "features": FeatureSettings,
    "laplace": LaplaceSettings,
    "contrastive": ContrastiveConfig,
    "cluster": ClusterSettings,
}


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ValidationError(f"config section {prefix!r} must be an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ValidationError(f"unknown config key {prefix + key!r}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad value in config section {prefix!r}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ValidationError("config root must be a JSON object")
    kwargs = {}
    for key, value in data.items():
        if key in _GROUPS:
            kwargs[key] = _build(_GROUPS[key], value, f"{key}.")
        elif key == "knn_k":
            kwargs[key] = value
        else:
            raise ValidationError(f"unknown config key {key!r}")
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad config value: {exc}") from exc


def config_to_dict(config: PipelineConfig) -> dict:
    return dataclasses.asdict(config)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Read a JSON config file; with no path, return the defaults."""
    if path is None:
        return PipelineConfig()
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def apply_overrides(config: PipelineConfig, assignments: list[str]) -> PipelineConfig:
    """Apply ``section.key=value`` strings; values are parsed as JSON literals
    (so ``true``, ``0.2``, ``[50,100]`` all work), falling back to raw text."""
    data = config_to_dict(config)
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"override {item!r} must look like key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ValidationError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ValidationError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return config_from_dict(data)
