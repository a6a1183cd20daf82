"""Strict YAML experiment configuration.

A config file is a mapping with a required ``mode`` and optional sections
``ufm``, ``encoder``, ``dataset``, ``model``, ``probe`` and ``sweep``. Unknown
keys and mistyped values are errors that name the key and its line.

Defaults for every section are the dataclass defaults below. The
``dataset``/``model``/``encoder`` defaults describe the fixed synthetic
encoder benchmark.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..classify import ProbeConfig
from ..encoder import MlpSpec, TrainConfig
from ..optim import OptimConfig

MODES = ("ufm", "encoder", "sweep", "verify", "metrics", "etf")
OUTPUT_ROOT_ENV = "NCSPHERE_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid configuration; the message carries the file and line when known."""


@dataclass
class DatasetConfig:
    num_classes: int = 10
    per_class: int = 100
    input_dim: int = 32
    separation: float = 4.0
    noise_sigma: float = 1.0
    seed: int = 42
    holdout_per_class: int = 100


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [64])
    dim: int = 16
    activation: str = "tanh"
    head: bool = True

    def spec(self, input_dim: int) -> MlpSpec:
        widths = (input_dim, *self.hidden, self.dim)
        return MlpSpec(widths, (self.activation,) * len(self.hidden), self.head)


@dataclass
class SweepConfig:
    """Grid over temperature, batch and seed for either run kind.

    For ``ufm`` sweeps the batch is the total sample count and must be a
    multiple of the class count; for ``encoder`` sweeps it is the SGD batch.
    """

    kind: str = "ufm"
    taus: list = field(default_factory=lambda: [0.1, 0.5])
    batches: list = field(default_factory=lambda: [100, 200])
    seeds: list = field(default_factory=lambda: [0])
    workers: int = 1


# Section defaults that differ from the dataclass defaults; they apply both
# when a section is omitted and to keys a present section leaves out.
SECTION_DEFAULTS = {
    "encoder": dict(epochs=100, batch_size=100, base_lr=0.5, augment_sigma=1.0, seed=42),
}


def _benchmark_train() -> TrainConfig:
    return TrainConfig(**SECTION_DEFAULTS["encoder"])


@dataclass
class ExperimentConfig:
    mode: str
    output_dir: Optional[str] = None
    ufm: OptimConfig = field(default_factory=OptimConfig)
    encoder: TrainConfig = field(default_factory=_benchmark_train)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def resolve_output_dir(self, override=None) -> Path:
        """Flag, then the config's ``output_dir``, then ``$NCSPHERE_OUTPUT_ROOT/<mode>``, then ``runs/<mode>``."""
        if override:
            return Path(override)
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.mode


SECTIONS = {
    "ufm": OptimConfig,
    "encoder": TrainConfig,
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "probe": ProbeConfig,
    "sweep": SweepConfig,
}
_LIST_ITEM = {
    ("model", "hidden"): int,
    ("sweep", "taus"): float,
    ("sweep", "batches"): int,
    ("sweep", "seeds"): int,
}


def _where(source, node) -> str:
    return f"{source}:{node.start_mark.line + 1}"


def _scalar(expected, value, where, key):
    if expected is bool:
        if isinstance(value, bool):
            return value
    elif expected is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif expected is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif expected is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"{where}: key {key!r} expects {expected.__name__}, got {type(value).__name__} {value!r}")


def _field_type(cls, name):
    hint = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    hint = hint if isinstance(hint, str) else getattr(hint, "__name__", str(hint))
    if hint.startswith("Optional["):
        hint = hint[len("Optional["):]
    for token, typ in (("bool", bool), ("int", int), ("float", float), ("str", str), ("list", list)):
        if hint.startswith(token):
            return typ
    raise TypeError(f"unsupported config field type {hint!r} for {cls.__name__}.{name}")


def _section(name, node, source):
    cls = SECTIONS[name]
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(source, node)}: section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key_node, value_node in node.value:
        key = key_node.value
        where = _where(source, key_node)
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r} in section {name!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r} in section {name!r}")
        value = yaml.safe_load(yaml.serialize(value_node))
        expected = _field_type(cls, key)
        if expected is list:
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{where}: key {key!r} expects a non-empty list")
            item = _LIST_ITEM[(name, key)]
            value = [_scalar(item, v, where, key) for v in value]
        else:
            value = _scalar(expected, value, where, key)
        values[key] = value
    try:
        return cls(**{**SECTION_DEFAULTS.get(name, {}), **values})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{_where(source, node)}: invalid section {name!r}: {exc}") from exc


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed YAML: {exc}") from exc
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}: top level must be a mapping with a 'mode' key")
    kwargs = {}
    for key_node, value_node in root.value:
        key = key_node.value
        where = _where(source, key_node)
        if key in kwargs:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        if key == "mode":
            mode = yaml.safe_load(yaml.serialize(value_node))
            if mode not in MODES:
                raise ConfigError(f"{where}: mode must be one of {MODES}, got {mode!r}")
            kwargs["mode"] = mode
        elif key == "output_dir":
            kwargs["output_dir"] = _scalar(str, yaml.safe_load(yaml.serialize(value_node)), where, key)
        elif key in SECTIONS:
            kwargs[key] = _section(key, value_node, source)
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    if "mode" not in kwargs:
        raise ConfigError(f"{source}: missing required key 'mode'")
    cfg = ExperimentConfig(**kwargs)
    _check_cross_fields(cfg, source)
    return cfg


def _check_cross_fields(cfg, source):
    sw = cfg.sweep
    if sw.kind not in ("ufm", "encoder"):
        raise ConfigError(f"{source}: sweep kind must be 'ufm' or 'encoder', got {sw.kind!r}")
    if sw.workers < 1:
        raise ConfigError(f"{source}: sweep workers must be >= 1")
    if cfg.model.activation not in ("tanh", "relu"):
        raise ConfigError(f"{source}: model activation must be 'tanh' or 'relu'")
    if cfg.mode == "sweep" and sw.kind == "ufm":
        for b in sw.batches:
            if b % cfg.ufm.num_classes or b < cfg.ufm.num_classes:
                raise ConfigError(f"{source}: ufm sweep batch {b} is not a positive multiple of "
                                  f"num_classes={cfg.ufm.num_classes}")


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    return parse_config_text(path.read_text(), str(path))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    if out["output_dir"] is None:
        del out["output_dir"]
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
