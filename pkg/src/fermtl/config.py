"""Run configuration: one JSON document drives a whole run.

Unknown keys are rejected and every diagnostic names the offending field,
so a committed config file fully determines a run (the CLI only overrides
the seed and the paths).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .errors import ConfigurationError
from .model import BackboneConfig
from .rng import derive_seed
from .training import EnsembleConfig, TrainConfig


@dataclass
class RunConfig:
    data_dir: str
    out_dir: str
    seed: int = 0
    val_fraction: float = 0.2
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train_epochs: int = 12
    train_batch_size: int = 32
    train_lambda: float = 1.0
    train_learning_rate: float = 1e-3
    train_beta1: float = 0.9
    train_beta2: float = 0.999
    train_epsilon: float = 1e-8
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    ensemble_members: int = 3
    ensemble_fraction: float = 0.2
    ensemble_variants: tuple = ("standard", "wide", "slim")
    ensemble_workers: int = 1

    def train_config(self, member: int = None) -> TrainConfig:
        """The training config for a single run, or for ensemble member `member`."""
        if member is None:
            seed = derive_seed(self.seed, "train")
            backbone = self.backbone
        else:
            seed = derive_seed(self.seed, "train", member)
            variant = self.ensemble_variants[member % len(self.ensemble_variants)]
            backbone = BackboneConfig(
                variant=variant,
                input_size=self.backbone.input_size,
                feature_dim=self.backbone.feature_dim,
                trunk_width=self.backbone.trunk_width,
                attention_heads=self.backbone.attention_heads,
                reduction=self.backbone.reduction,
            )
        cfg = TrainConfig(
            epochs=self.train_epochs,
            batch_size=self.train_batch_size,
            landmark_weight=self.train_lambda,
            learning_rate=self.train_learning_rate,
            beta1=self.train_beta1,
            beta2=self.train_beta2,
            epsilon=self.train_epsilon,
            augment=self.augment,
            backbone=backbone,
            seed=seed,
        )
        cfg.validate()
        return cfg

    def ensemble_config(self) -> EnsembleConfig:
        cfg = EnsembleConfig(
            members=[self.train_config(member=i) for i in range(self.ensemble_members)],
            subsample_fraction=self.ensemble_fraction,
            seed=self.seed,
            workers=self.ensemble_workers,
        )
        cfg.validate()
        return cfg

    def split_seed(self) -> int:
        return derive_seed(self.seed, "data")


class _Section:
    """Typed, exhaustive reader over one nested dict."""

    def __init__(self, name: str, data: dict):
        if not isinstance(data, dict):
            raise ConfigurationError(f"{name or 'config'}: expected an object, got {type(data).__name__}")
        self.name = name
        self.data = dict(data)

    def _label(self, key):
        return f"{self.name}.{key}" if self.name else key

    def take(self, key, kind, default):
        if key not in self.data:
            return default
        value = self.data.pop(key)
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind in (int, float) and isinstance(value, bool):
            raise ConfigurationError(f"{self._label(key)}: expected {kind.__name__}, got a boolean")
        if not isinstance(value, kind):
            raise ConfigurationError(
                f"{self._label(key)}: expected {kind.__name__}, got {type(value).__name__} ({value!r})"
            )
        return value

    def take_pair(self, key, default):
        if key not in self.data:
            return default
        value = self.data.pop(key)
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigurationError(f"{self._label(key)}: expected a [lo, hi] pair, got {value!r}")
        return (float(value[0]), float(value[1]))

    def section(self, key):
        return _Section(self._label(key), self.data.pop(key, {}))

    def finish(self):
        if self.data:
            keys = ", ".join(sorted(self.data))
            raise ConfigurationError(f"{self.name or 'config'}: unknown keys: {keys}")


def parse_run_config(doc: dict, config_dir: Path = None) -> RunConfig:
    top = _Section("", doc)
    data_dir = top.take("data_dir", str, None)
    out_dir = top.take("out_dir", str, None)
    if data_dir is None:
        raise ConfigurationError("data_dir: required")
    if out_dir is None:
        raise ConfigurationError("out_dir: required")
    if config_dir is not None:
        data_dir = str((config_dir / data_dir).resolve())
        out_dir = str((config_dir / out_dir).resolve())
    seed = top.take("seed", int, 0)
    val_fraction = top.take("val_fraction", float, 0.2)
    if not 0.0 < val_fraction < 1.0:
        raise ConfigurationError(f"val_fraction: must be in (0, 1), got {val_fraction}")

    b = top.section("backbone")
    backbone = BackboneConfig(
        variant=b.take("variant", str, "standard"),
        input_size=b.take("input_size", int, BackboneConfig.input_size),
        feature_dim=b.take("feature_dim", int, BackboneConfig.feature_dim),
        trunk_width=b.take("trunk_width", int, BackboneConfig.trunk_width),
        attention_heads=b.take("attention_heads", int, BackboneConfig.attention_heads),
        reduction=b.take("reduction", int, BackboneConfig.reduction),
    )
    b.finish()
    try:
        backbone.validate()
    except ConfigurationError as exc:
        raise ConfigurationError(f"backbone: {exc}") from None

    t = top.section("train")
    train_epochs = t.take("epochs", int, 12)
    train_batch_size = t.take("batch_size", int, 32)
    train_lambda = t.take("lambda", float, 1.0)
    train_learning_rate = t.take("learning_rate", float, 1e-3)
    train_beta1 = t.take("beta1", float, 0.9)
    train_beta2 = t.take("beta2", float, 0.999)
    train_epsilon = t.take("epsilon", float, 1e-8)
    t.finish()
    if train_epochs < 1:
        raise ConfigurationError(f"train.epochs: must be >= 1, got {train_epochs}")
    if train_batch_size < 1:
        raise ConfigurationError(f"train.batch_size: must be >= 1, got {train_batch_size}")
    if train_lambda < 0:
        raise ConfigurationError(f"train.lambda: must be >= 0, got {train_lambda}")

    a = top.section("augment")
    augment = AugmentConfig(
        jitter_range=a.take("jitter_range", float, AugmentConfig.jitter_range),
        flip_prob=a.take("flip_prob", float, AugmentConfig.flip_prob),
        erase_prob=a.take("erase_prob", float, AugmentConfig.erase_prob),
        erase_area=a.take_pair("erase_area", AugmentConfig.erase_area),
        erase_aspect=a.take_pair("erase_aspect", AugmentConfig.erase_aspect),
        mix_alpha=a.take("mix_alpha", float, AugmentConfig.mix_alpha),
        enable_jitter=a.take("enable_jitter", bool, True),
        enable_flip=a.take("enable_flip", bool, True),
        enable_erase=a.take("enable_erase", bool, True),
        enable_mix=a.take("enable_mix", bool, True),
        mix_real_term=a.take("mix_real_term", bool, True),
    )
    a.finish()
    try:
        augment.validate()
    except ConfigurationError as exc:
        raise ConfigurationError(f"augment: {exc}") from None

    e = top.section("ensemble")
    ensemble_members = e.take("member_count", int, 3)
    ensemble_fraction = e.take("subsample_fraction", float, 0.2)
    variants = e.data.pop("variants", ["standard", "wide", "slim"])
    if not isinstance(variants, list) or not all(isinstance(v, str) for v in variants) or not variants:
        raise ConfigurationError(f"ensemble.variants: expected a non-empty list of strings, got {variants!r}")
    ensemble_workers = e.take("workers", int, 1)
    e.finish()
    if ensemble_members < 1:
        raise ConfigurationError(f"ensemble.member_count: must be >= 1, got {ensemble_members}")
    if not 0.0 < ensemble_fraction <= 1.0:
        raise ConfigurationError(
            f"ensemble.subsample_fraction: must be in (0, 1], got {ensemble_fraction}"
        )
    if ensemble_workers < 1:
        raise ConfigurationError(f"ensemble.workers: must be >= 1, got {ensemble_workers}")

    top.finish()
    return RunConfig(
        data_dir=data_dir,
        out_dir=out_dir,
        seed=seed,
        val_fraction=val_fraction,
        backbone=backbone,
        train_epochs=train_epochs,
        train_batch_size=train_batch_size,
        train_lambda=train_lambda,
        train_learning_rate=train_learning_rate,
        train_beta1=train_beta1,
        train_beta2=train_beta2,
        train_epsilon=train_epsilon,
        augment=augment,
        ensemble_members=ensemble_members,
        ensemble_fraction=ensemble_fraction,
        ensemble_variants=tuple(variants),
        ensemble_workers=ensemble_workers,
    )


def load_run_config(path, seed_override=None, out_override=None) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    cfg = parse_run_config(doc, config_dir=path.parent)
    if seed_override is not None:
        cfg.seed = int(seed_override)
    if out_override is not None:
        cfg.out_dir = str(out_override)
    if not Path(cfg.data_dir).is_dir():
        raise ConfigurationError(f"data_dir: directory does not exist: {cfg.data_dir}")
    return cfg
