"""Run configuration: one TOML/JSON file with a table per component.

Tables and their field names mirror the dataclasses they build::

    [train]    -> TrainConfig
    [physics]  -> PhysicsParams
    [augment]  -> AugmentConfig
    [fusion]   -> FusionConfig
    [split]    -> SplitSpec
    [crossval] -> CvPlan
    [ensemble] -> members (int)

Missing tables fall back to defaults; unknown tables or keys are errors so a
typo never silently trains with a default. When no path is given the loader
consults ``$H2XPINN_CONFIG``.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import AugmentConfig, SplitSpec
from .inference import FusionConfig
from .physics import PhysicsParams
from .training import CvPlan, TrainConfig

ENV_VAR = "H2XPINN_CONFIG"
SECTIONS = ("train", "physics", "augment", "fusion", "split", "crossval", "ensemble")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleSettings:
    members: int = 100

    def __post_init__(self):
        if self.members < 2:
            raise ValueError("an ensemble needs at least two members")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    crossval: CvPlan = field(default_factory=CvPlan)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    source: str | None = None

    def to_dict(self):
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out["train"] = self.train.to_dict()
        out["augment"]["bounds"] = list(self.augment.bounds)
        return out


def _read(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.loads(text)


def _build(cls, table, section):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {unknown}")
    if cls is PhysicsParams:
        return PhysicsParams.from_dict(table)
    if cls is AugmentConfig and "bounds" in table:
        table = {**table, "bounds": tuple(float(b) for b in table["bounds"])}
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


_CLASSES = {
    "train": TrainConfig,
    "physics": PhysicsParams,
    "augment": AugmentConfig,
    "fusion": FusionConfig,
    "split": SplitSpec,
    "crossval": CvPlan,
    "ensemble": EnsembleSettings,
}


def from_dict(data, source=None):
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config table(s): {unknown}")
    parts = {name: _build(_CLASSES[name], data[name], name) for name in SECTIONS if name in data}
    return RunConfig(**parts, source=source)


def load_config(path=None):
    """Load ``path``, else ``$H2XPINN_CONFIG``, else all defaults."""
    path = path or os.environ.get(ENV_VAR) or None
    if path is None:
        return RunConfig()
    return from_dict(_read(path), source=str(path))
