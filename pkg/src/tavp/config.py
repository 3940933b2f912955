"""Run configuration: one YAML file describing a full pipeline run.

The file mirrors the dataclass tree below. Unknown keys are rejected at every
nesting level so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .backbone import EncoderConfig
from .datasets import AugmentPolicy, DomainSpec
from .losses import LossConfig
from .model import ModelConfig
from .trainer import TrainConfig

__all__ = [
    "ConfigError",
    "EvalConfig",
    "RunConfig",
    "default_run_config",
    "load_config",
    "dump_config",
    "save_config",
    "model_config_from_dict",
]


class ConfigError(ValueError):
    """A config file failed schema validation."""


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 20
    shots: tuple = (1, 5)

    def validate(self) -> None:
        if self.n_episodes < 1:
            raise ValueError("eval.n_episodes must be >= 1")
        if not self.shots:
            raise ValueError("eval.shots must be nonempty")
        if any(int(s) < 1 for s in self.shots):
            raise ValueError("eval.shots must all be >= 1")


def _default_domains() -> tuple:
    """Four synthetic domains; the grayscale blobs are the usual holdout."""
    return (
        DomainSpec(domain_id="ellipse_flat", shape_family="ellipse", texture="flat"),
        DomainSpec(domain_id="rectangle_stripes", shape_family="rectangle", texture="stripes"),
        DomainSpec(domain_id="polygon_noise", shape_family="polygon", texture="noise",
                   noise_std=0.05),
        DomainSpec(domain_id="blob_gray", shape_family="blob", palette="grayscale"),
    )


@dataclass(frozen=True)
class RunConfig:
    domains: tuple = field(default_factory=_default_domains)
    n_classes: int = 6
    n_per_class: int = 8
    holdout_domain: str = "blob_gray"
    # class-level cross-validation fold; None trains on every class
    n_folds: int = 5
    fold: int | None = None
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "runs"
    seed: int = 0

    def validate(self) -> None:
        if not self.domains:
            raise ValueError("domains must be nonempty")
        ids = [d.domain_id for d in self.domains]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate domain ids in {ids}")
        for d in self.domains:
            d.validate()
            if d.canvas_size != self.model.encoder.image_size:
                raise ValueError(
                    f"domain {d.domain_id!r} canvas {d.canvas_size} differs from "
                    f"encoder image_size {self.model.encoder.image_size}")
        if self.holdout_domain not in ids:
            raise ValueError(f"holdout_domain {self.holdout_domain!r} not in {ids}")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        need = max([self.train.shot] + [int(s) for s in self.eval.shots]) + 1
        if self.n_per_class < need:
            raise ValueError(f"n_per_class must be >= {need} for the configured shots")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if self.fold is not None and not 0 <= self.fold < self.n_folds:
            raise ValueError(f"fold must lie in [0, {self.n_folds})")
        self.augment.validate()
        self.model.validate()
        self.loss.validate()
        self.train.validate()
        self.eval.validate()
        if self.loss.dice_weight != self.train.dice_weight:
            raise ValueError("loss.dice_weight and train.dice_weight must agree")
        if not self.out_dir:
            raise ValueError("out_dir must be nonempty")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    def train_domains(self) -> tuple:
        return tuple(d for d in self.domains if d.domain_id != self.holdout_domain)

    def holdout(self) -> DomainSpec:
        for d in self.domains:
            if d.domain_id == self.holdout_domain:
                return d
        raise KeyError(self.holdout_domain)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def default_run_config() -> RunConfig:
    return RunConfig()


def _plain(obj):
    """asdict output with tuples as lists, for clean YAML."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build_leaf(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def _build_model(data, path: str) -> ModelConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    data = dict(data)
    encoder = _build_leaf(EncoderConfig, data.pop("encoder", None), f"{path}.encoder")
    allowed = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    return ModelConfig(encoder=encoder, **data)


def model_config_from_dict(data: dict) -> ModelConfig:
    """Rebuild a ModelConfig from its dict form (e.g. a checkpoint snapshot)."""
    return _build_model(data, "model_config")


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root: expected a mapping, got {type(data).__name__}")
    data = dict(data)
    sections = {}
    if "domains" in data:
        raw = data.pop("domains")
        if not isinstance(raw, list):
            raise ConfigError("domains: expected a list of mappings")
        sections["domains"] = tuple(
            _build_leaf(DomainSpec, d, f"domains[{i}]") for i, d in enumerate(raw))
    for name, cls in (("augment", AugmentPolicy), ("loss", LossConfig),
                      ("train", TrainConfig), ("eval", EvalConfig)):
        if name in data:
            sections[name] = _build_leaf(cls, data.pop(name), name)
    if "model" in data:
        sections["model"] = _build_model(data.pop("model"), "model")
    scalars = {"n_classes", "n_per_class", "holdout_domain", "n_folds", "fold",
               "out_dir", "seed"}
    unknown = sorted(set(data) - scalars)
    if unknown:
        raise ConfigError(f"config root: unknown keys {unknown}")
    return RunConfig(**sections, **data)


def load_config(path) -> RunConfig:
    """Parse, build, and validate a YAML run config."""
    with open(path) as f:
        raw = yaml.safe_load(f)
    if raw is None:
        raw = {}
    try:
        config = from_dict(raw)
        config.validate()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:  # bad value or type behind a field
        raise ConfigError(f"{path}: {exc}") from exc
    return config


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def save_config(config: RunConfig, path) -> None:
    with open(path, "w") as f:
        f.write(dump_config(config))
