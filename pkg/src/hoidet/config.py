"""Run configuration: one JSON file drives every command.

Sections mirror the subsystems (model / loss / nms / eval / schedule /
paths).  Parsing is strict: unknown keys are enumerated and rejected
before any compute happens, and every run persists its resolved config
next to its outputs so reruns are exact.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluation import EvalConfig
from .fileio import atomic_write_json, read_json
from .inference import TridentNMSConfig
from .losses import LossWeights
from .model import ModelConfig
from .training import Schedule


@dataclass
class Paths:
    dataset: str = ""
    out_dir: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    nms: TridentNMSConfig = field(default_factory=TridentNMSConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    schedule: Schedule = field(default_factory=Schedule)
    paths: Paths = field(default_factory=Paths)

    def validate(self) -> None:
        self.model.validate()
        self.loss.validate()
        self.nms.validate()
        self.eval.validate()
        self.schedule.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossWeights,
    "nms": TridentNMSConfig,
    "eval": EvalConfig,
    "schedule": Schedule,
    "paths": Paths,
}


def _build_section(cls, payload: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    kwargs = {}
    for name, value in payload.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad [{section}] section: {exc}")


def run_config_from_dict(payload: dict) -> RunConfig:
    unknown = set(payload) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        body = payload.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section [{section}] must be an object")
        kwargs[section] = _build_section(cls, body, section)
    return RunConfig(**kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    try:
        payload = read_json(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(payload, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return run_config_from_dict(payload)


def save_run_config(path: str | Path, cfg: RunConfig) -> None:
    atomic_write_json(path, cfg.to_dict())
