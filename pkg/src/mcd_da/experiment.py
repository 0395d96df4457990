"""Glue between an ExperimentConfig, the datasets it names and the trainer."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, serialize_config
from .data import LabeledDataset, Standardizer, UnlabeledDataset, load_csv, load_idx, make_moons, rotate
from .errors import DataError
from .mcd import MCDModel, TrainResult, train
from .nn import (Linear, ReLU, digit_classifier_spec, digit_generator_spec, read_checkpoint,
                 save_network, write_checkpoint)

CHECKPOINT_FILES = {"g": "G.mcdnet", "f1": "F1.mcdnet", "f2": "F2.mcdnet"}
NORM_FILE = "norm.mcdnet"
CONFIG_FILE = "config.txt"
METRICS_FILE = "metrics.csv"


@dataclass
class Datasets:
    source: LabeledDataset
    target: UnlabeledDataset
    target_eval: LabeledDataset
    # raw (pre-standardization) coordinates for plotting
    raw_points: np.ndarray
    norm: Standardizer


def toy_specs(hidden: int, num_classes: int, depth: int = 2):
    g = [Linear(2, hidden), ReLU()]
    for _ in range(depth - 1):
        g += [Linear(hidden, hidden), ReLU()]
    f = []
    for _ in range(depth - 1):
        f += [Linear(hidden, hidden), ReLU()]
    f += [Linear(hidden, num_classes)]
    return g, f


def network_specs(cfg: ExperimentConfig, in_dim: int):
    k = cfg.training.num_classes
    if cfg.kind == "toy":
        return toy_specs(cfg.hidden, k, cfg.toy_depth)
    return digit_generator_spec(in_dim), digit_classifier_spec(400, 100, k)


def toy_data(cfg: ExperimentConfig, rotation: float | None = None):
    """Source moons, an independently drawn rotated target, and a rotated test set."""
    angle = cfg.rotation if rotation is None else rotation
    seed = cfg.training.data_seed
    source = make_moons(cfg.n_per_class, cfg.noise, seed)
    target = rotate(make_moons(cfg.n_per_class, cfg.noise, seed + 1), angle)
    test = rotate(make_moons(cfg.test_samples // 2, cfg.noise, seed + 2), angle)
    return source, target, test


def load_reference(ref: str, downsample: bool, num_classes: int | None = None):
    parts = [p.strip() for p in ref.split(",")]
    for p in parts:
        if not Path(p).is_file():
            raise DataError(f"dataset file not found: {p}")
    if len(parts) == 1:
        return load_csv(parts[0], num_classes)
    if len(parts) == 2:
        return load_idx(parts[0], parts[1], downsample=downsample, num_classes=num_classes)
    raise DataError(f"bad dataset reference {ref!r}")


def _subsample(ds, n: int, seed: int):
    if n <= 0 or n >= len(ds):
        return ds
    idx = np.sort(np.random.default_rng(seed).choice(len(ds), size=n, replace=False))
    return ds.subset(idx)


def build_datasets(cfg: ExperimentConfig) -> Datasets:
    k = cfg.training.num_classes
    if cfg.kind == "toy":
        source, target, test = toy_data(cfg)
    else:
        seed = cfg.training.data_seed
        source = _subsample(load_reference(cfg.source, cfg.downsample, k), cfg.source_n, seed)
        if not isinstance(source, LabeledDataset):
            raise DataError("source dataset must be labeled")
        target = _subsample(load_reference(cfg.target, cfg.downsample, k), cfg.target_n, seed + 1)
        if cfg.target_eval:
            test = load_reference(cfg.target_eval, cfg.downsample, k)
        else:
            test = target
        if not isinstance(test, LabeledDataset):
            raise DataError("target evaluation data must be labeled")
    if not (source.dim == target.dim == test.dim):
        raise DataError(f"feature dims differ: {source.dim}, {target.dim}, {test.dim}")
    norm = Standardizer.fit(source) if cfg.standardize else Standardizer(np.zeros(source.dim), np.ones(source.dim))
    raw = np.vstack([source.features, target.features])
    target_u = target.unlabeled() if isinstance(target, LabeledDataset) else target
    return Datasets(norm(source), norm(target_u), norm(test), raw, norm)


def run_experiment(cfg: ExperimentConfig, progress=None) -> tuple[TrainResult, Datasets]:
    data = build_datasets(cfg)
    g_spec, f_spec = network_specs(cfg, data.source.dim)
    result = train(cfg.training, data.source, data.target, data.target_eval, g_spec, f_spec, progress)
    return result, data


def save_run(out_dir, cfg: ExperimentConfig, result: TrainResult, data: Datasets) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key, net in zip(("g", "f1", "f2"), result.nets):
        save_network(net, out / CHECKPOINT_FILES[key])
    write_checkpoint(out / NORM_FILE, {"mean": data.norm.mean, "std": data.norm.std})
    (out / METRICS_FILE).write_text(result.log.to_csv())
    (out / CONFIG_FILE).write_text(serialize_config(cfg))


def load_run(ckpt_dir) -> tuple[ExperimentConfig, MCDModel, Standardizer]:
    """Rebuild the three networks (in eval mode) and the input transform."""
    ckpt = Path(ckpt_dir)
    for name in (CONFIG_FILE, NORM_FILE, *CHECKPOINT_FILES.values()):
        if not (ckpt / name).is_file():
            raise DataError(f"checkpoint directory {ckpt} lacks {name}")
    cfg = load_config(ckpt / CONFIG_FILE)
    norm_state = read_checkpoint(ckpt / NORM_FILE)
    norm = Standardizer(norm_state["mean"], norm_state["std"])
    g_spec, f_spec = network_specs(cfg, norm.mean.shape[0])
    model = MCDModel.build(cfg.training, g_spec, f_spec)
    for key, net in zip(("g", "f1", "f2"), model.nets()):
        net.load_state(read_checkpoint(ckpt / CHECKPOINT_FILES[key]))
    model.eval()
    return cfg, model, norm


__all__ = ["Datasets", "build_datasets", "run_experiment", "save_run", "load_run", "toy_data",
           "network_specs", "load_reference", "load_config"]
