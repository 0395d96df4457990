"""Flat ``key=value`` experiment configuration files."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .mcd import TrainingConfig

KINDS = ("toy", "digits")

# Per-kind training defaults; anything not listed falls back to TrainingConfig.
KIND_DEFAULTS = {
    "toy": dict(num_classes=2, batch_size=200, lr=2e-4, n=3, max_iters=5000, eval_every=100),
    # 200 epochs of 2000 samples at batch 128 is ~3100 iterations
    "digits": dict(num_classes=10, batch_size=128, lr=2e-4, n=4, max_iters=3000, eval_every=100),
}


@dataclass
class ExperimentConfig:
    kind: str = "toy"
    out: str = "runs/out"
    standardize: bool = True
    # toy
    n_per_class: int = 300
    noise: float = 0.1
    rotation: float = 30.0
    test_samples: int = 1000
    hidden: int = 15
    toy_depth: int = 2
    # digits: a dataset reference is either "file.csv" or "images.idx,labels.idx"
    source: str = ""
    target: str = ""
    target_eval: str = ""
    source_n: int = 2000
    target_n: int = 1800
    downsample: bool = True
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "digits":
            for key in ("source", "target"):
                if not getattr(self, key):
                    raise ConfigError(f"digits experiments need '{key}'")
        if self.kind == "toy":
            if self.n_per_class < 1 or self.test_samples < 2:
                raise ConfigError("n_per_class must be >= 1 and test_samples >= 2")
            if self.noise < 0:
                raise ConfigError("noise must be >= 0")
            if self.toy_depth not in (2, 3):
                raise ConfigError("toy_depth must be 2 or 3")
        self.training.validate()
        return self


_EXPERIMENT_KEYS = [f.name for f in dataclasses.fields(ExperimentConfig) if f.name != "training"]
_TRAINING_KEYS = [f.name for f in dataclasses.fields(TrainingConfig)]
_HINTS = {**typing.get_type_hints(ExperimentConfig), **typing.get_type_hints(TrainingConfig)}


def _coerce(key: str, raw: str):
    kind = _HINTS[key]
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> ExperimentConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _EXPERIMENT_KEYS and key not in _TRAINING_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    if "kind" not in values:
        raise ConfigError("missing required key 'kind'")
    kind = values["kind"]
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    training = dict(KIND_DEFAULTS[kind])
    experiment = {}
    for key, raw in values.items():
        if key in _TRAINING_KEYS:
            training[key] = _coerce(key, raw)
        else:
            experiment[key] = _coerce(key, raw)
    return ExperimentConfig(**experiment, training=TrainingConfig(**training)).validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [f"{key}={_fmt(getattr(cfg, key))}" for key in _EXPERIMENT_KEYS]
    lines += [f"{key}={_fmt(getattr(cfg.training, key))}" for key in _TRAINING_KEYS]
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
