"""YAML run configuration: one section per component, strict keys."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .datamodel import ClassTable
from .losses import DiceConfig, OhemConfig
from .model import ModelConfig
from .sampler import AugConfig, SamplePolicy
from .synth import SynthSpec
from .tiler import TileSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class SynthSection:
    height: int = 256
    width: int = 256
    frequencies: tuple[float, ...] | None = None
    illumination: float = 0.05

    def spec(self) -> SynthSpec:
        kw = {"height": self.height, "width": self.width, "illumination": self.illumination}
        if self.frequencies is not None:
            kw["frequencies"] = tuple(self.frequencies)
        return SynthSpec(**kw)


@dataclass(frozen=True)
class Paths:
    data_root: str = "data"
    run_root: str = "run"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    classes: ClassTable = field(default_factory=ClassTable)
    synth: SynthSection = field(default_factory=SynthSection)
    sampler: SamplePolicy = field(default_factory=SamplePolicy)
    augment: AugConfig = field(default_factory=AugConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ohem: OhemConfig = field(default_factory=OhemConfig)
    dice: DiceConfig = field(default_factory=DiceConfig)
    tiles: TileSpec = field(default_factory=TileSpec)
    paths: Paths = field(default_factory=Paths)

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "classes": self.classes.to_dict()}
        for name in SECTIONS:
            out[name] = _plain(dataclasses.asdict(getattr(self, name)))
        return out


SECTIONS = {
    "synth": SynthSection,
    "sampler": SamplePolicy,
    "augment": AugConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "ohem": OhemConfig,
    "dice": DiceConfig,
    "tiles": TileSpec,
    "paths": Paths,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tupled(v):
    return tuple(_tupled(x) for x in v) if isinstance(v, list) else v


def _build(cls, doc: Any, path: str, extra: dict | None = None):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown key")
    kwargs = {k: _tupled(v) for k, v in doc.items()}
    kwargs.update(extra or {})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_config(doc: dict | None) -> RunConfig:
    doc = dict(doc or {})
    allowed = {"seed", "classes", *SECTIONS}
    for key in doc:
        if key not in allowed:
            raise ConfigError(key, "unknown key")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed", "must be an integer")

    try:
        classes = ClassTable.from_dict(doc.get("classes") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("classes", str(exc)) from exc

    train_doc = dict(doc.get("train") or {})
    if "seed" in train_doc:
        raise ConfigError("train.seed", "set the top-level seed instead")
    sections = {}
    for name, cls in SECTIONS.items():
        extra = {"seed": seed} if name == "train" else None
        if name == "sampler" and "rare_set" not in (doc.get("sampler") or {}):
            extra = {"rare_set": classes.rare_set}
        sections[name] = _build(cls, train_doc if name == "train" else doc.get(name), name, extra)

    if sections["model"].num_classes != classes.num_classes:
        raise ConfigError("model.num_classes",
                          f"{sections['model'].num_classes} does not match {classes.num_classes} table classes")
    freqs = sections["synth"].frequencies
    if freqs is not None and len(freqs) != classes.num_classes:
        raise ConfigError("synth.frequencies", "needs one entry per class")
    try:
        sections["synth"].spec()
    except ValueError as exc:
        raise ConfigError("synth", str(exc)) from exc
    return RunConfig(seed=seed, classes=classes, **sections)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
    return parse_config(doc)


def override(cfg: RunConfig, section: str | None, **values) -> RunConfig:
    """Return ``cfg`` with non-None ``values`` applied to ``section`` (None = top level)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    doc = cfg.to_dict()
    if section is None:
        doc.update(values)
    else:
        doc.setdefault(section, {}).update(values)
    doc["train"].pop("seed", None)
    return parse_config(doc)
