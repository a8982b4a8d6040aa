"""Experiment configuration files.

A config is a JSON object with optional sections ``world``, ``agent`` and
``training``; each section's keys map onto the matching dataclass.  Unknown
keys are rejected so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .agent import AgentConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class WorldConfig:
    seed: int = 0
    scenes: int = 100
    episodes_per_scene: int = 20
    nodes: int = 20
    mean_degree: float = 3.0
    v_lm: int = 16
    k_max: int = 8
    l_max: int = 24
    landmark_dropout: float = 0.5

    def dataset_kwargs(self) -> dict[str, Any]:
        return {
            "v_lm": self.v_lm, "k_max": self.k_max, "l_max": self.l_max,
            "landmark_dropout": self.landmark_dropout,
        }


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    agent: AgentConfig = field(default_factory=lambda: AgentConfig(v_lm=16, heads=4))
    training: TrainConfig = field(default_factory=lambda: TrainConfig(lr=3e-3, iterations=3000))

    def to_dict(self) -> dict:
        return {"world": asdict(self.world), "agent": asdict(self.agent), "training": asdict(self.training)}


_SECTIONS = {"world": WorldConfig, "agent": AgentConfig, "training": TrainConfig}


def _build(cls, values: Any, section: str, default):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(unknown)}")
    merged = {**asdict(default), **values}
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def from_dict(data: Any) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    base = ExperimentConfig()
    out = {name: _build(cls, data.get(name, {}), name, getattr(base, name)) for name, cls in _SECTIONS.items()}
    cfg = ExperimentConfig(**out)
    check_consistent(cfg)
    return cfg


def check_consistent(cfg: ExperimentConfig) -> None:
    w, a = cfg.world, cfg.agent
    if (w.v_lm, w.k_max, w.l_max) != (a.v_lm, a.k_max, a.l_max):
        raise ConfigError("world and agent disagree on v_lm / k_max / l_max")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(data)


def save_config(path: str | Path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
