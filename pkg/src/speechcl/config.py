"""Aggregate run configuration with strict JSON round-tripping.

Unknown keys are rejected with the offending section named, so a typo in a
config file fails loudly instead of silently running with defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .alteration import AlterationConfig
from .augment import AugmentConfig
from .features import FrontendConfig
from .model import EncoderConfig
from .probe import ProbeConfig
from .synth import SynthConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunPaths:
    data_dir: str | None = None
    noise_dir: str | None = None
    output_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    alteration: AlterationConfig = field(default_factory=AlterationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: RunPaths = field(default_factory=RunPaths)


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    converted = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        converted[f.name] = value
    try:
        return cls(**converted)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


_SECTIONS = {
    "augment": AugmentConfig,
    "frontend": FrontendConfig,
    "alteration": AlterationConfig,
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "probe": ProbeConfig,
    "synth": SynthConfig,
    "paths": RunPaths,
}


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level config sections: {sorted(unknown)}")
    sections = {name: _build_section(cls, data.get(name, {}), name) for name, cls in _SECTIONS.items()}
    return RunConfig(**sections)


def config_to_dict(cfg: RunConfig) -> dict:
    def jsonable(value):
        if isinstance(value, tuple):
            return list(value)
        return value

    out = {}
    for section in _SECTIONS:
        sub = dataclasses.asdict(getattr(cfg, section))
        out[section] = {k: jsonable(v) for k, v in sub.items()}
    return out


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
