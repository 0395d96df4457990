"""Datasets: two-moons generation, rotation, IDX/CSV loading and batching."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagic, CountMismatch, DataError, DimensionError,
                     NonNumeric, RaggedRows, TruncatedFile)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class UnlabeledDataset:
    features: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"features must be [N, D], got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain NaN or Inf")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def with_features(self, features: np.ndarray):
        return UnlabeledDataset(features)

    def subset(self, idx):
        return self.with_features(self.features[idx])


@dataclass(frozen=True)
class LabeledDataset(UnlabeledDataset):
    labels: np.ndarray = field(default=None)
    num_classes: int | None = None

    def __post_init__(self):
        super().__post_init__()
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != self.features.shape[0]:
            raise CountMismatch(f"{y.shape} labels for {self.features.shape[0]} samples")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        k = self.num_classes if self.num_classes is not None else int(y.max()) + 1 if y.size else 0
        if y.size and (y.min() < 0 or y.max() >= k):
            raise DataError(f"labels outside [0, {k})")
        y.setflags(write=False)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", k)

    def with_features(self, features: np.ndarray):
        return LabeledDataset(features, self.labels, self.num_classes)

    def subset(self, idx):
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)

    def unlabeled(self) -> UnlabeledDataset:
        return UnlabeledDataset(self.features)


def make_moons(n_per_class: int, noise_sd: float = 0.1, seed: int = 0) -> LabeledDataset:
    """Two interleaving half circles.

    Label 1 is the upper moon ``(cos t, sin t)``; label 0 the lower one
    ``(1 - cos t, 0.5 - sin t)``, with ``t`` evenly spaced over ``[0, pi]``.
    Rows are ordered label 0 first.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    t = np.linspace(0.0, np.pi, n_per_class)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([lower, upper])
    if noise_sd > 0:
        x = x + np.random.default_rng(seed).normal(0.0, noise_sd, size=x.shape)
    y = np.repeat([0, 1], n_per_class)
    return LabeledDataset(x, y, 2)


def rotate(ds, angle_deg: float):
    """Rotate 2-D points counter-clockwise about the dataset centroid."""
    if ds.dim != 2:
        raise DimensionError(f"rotation needs 2-D features, got D={ds.dim}")
    if angle_deg % 360.0 == 0.0:
        # skip the centroid round trip, which is not bit-exact
        return ds.with_features(ds.features.copy())
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    center = ds.features.mean(axis=0)
    return ds.with_features((ds.features - center) @ rot.T + center)


class Standardizer:
    """Per-feature zero-mean / unit-variance transform fitted on one dataset."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = mean
        self.std = std

    @classmethod
    def fit(cls, ds: UnlabeledDataset) -> "Standardizer":
        std = ds.features.std(axis=0)
        return cls(ds.features.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, ds):
        return ds.with_features((ds.features - self.mean) / self.std)


def _read_idx(path: Path, magic: int) -> tuple[tuple[int, ...], bytes]:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: missing header")
    (found,) = struct.unpack(">I", blob[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise TruncatedFile(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    size = int(np.prod(dims))
    if len(blob) - header < size:
        raise TruncatedFile(f"{path}: expected {size} data bytes, found {len(blob) - header}")
    return dims, blob[header:header + size]


def load_idx(images_path, labels_path, downsample: bool = False,
             num_classes: int | None = 10) -> LabeledDataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1] and flattened.

    With ``downsample``, 28x28 images are zero-padded to 32x32 and 2x2
    average pooled, giving 16x16 (the USPS resolution).
    """
    (n, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC)
    (n_labels,), raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if n != n_labels:
        raise CountMismatch(f"{n} images but {n_labels} labels")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n, rows, cols) / 255.0
    if downsample and rows == cols == 28:
        images = _to_16(images)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    k = num_classes if num_classes is not None else None
    return LabeledDataset(images.reshape(images.shape[0], -1), labels, k)


def _to_16(images: np.ndarray) -> np.ndarray:
    # 28x28 -> pad to 32x32 -> 2x2 mean pool -> 16x16
    padded = np.pad(images, ((0, 0), (2, 2), (2, 2)))
    n = padded.shape[0]
    return padded.reshape(n, 16, 2, 16, 2).mean(axis=(2, 4))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of ``load_idx`` for uint8 arrays; used for fixtures and export."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def load_csv(path, num_classes: int | None = None):
    """Read ``f0,...,fD-1[,label]`` rows; a ``label`` header column makes it labeled."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    labeled = bool(header) and header[-1] == "label"
    n_features = len(header) - 1 if labeled else len(header)
    expected = [f"f{i}" for i in range(n_features)]
    if header[:n_features] != expected:
        raise DataError(f"{path}: header must be f0..f{n_features - 1}[,label], got {header}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise RaggedRows(f"{path}:{lineno}: {len(r)} fields, header has {len(header)}")
    try:
        values = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise NonNumeric(f"{path}: {exc}") from None
    if labeled:
        return LabeledDataset(values[:, :-1], values[:, -1], num_classes)
    return UnlabeledDataset(values)


def write_csv(ds, path) -> None:
    d = ds.dim
    header = [f"f{i}" for i in range(d)]
    labeled = isinstance(ds, LabeledDataset)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header + (["label"] if labeled else []))
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.features[i]]
            if labeled:
                row.append(str(int(ds.labels[i])))
            w.writerow(row)


def batches(n: int, batch_size: int, seed: int, epoch: int = 0, drop_last: bool = False) -> list[np.ndarray]:
    """Split a seeded permutation of ``range(n)`` into consecutive index slices."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if drop_last and out and len(out[-1]) < batch_size:
        out.pop()
    return out


class BatchStream:
    """Endless stream of index batches, reshuffled every epoch."""

    def __init__(self, n: int, batch_size: int, seed: int, drop_last: bool = True):
        if drop_last and n < batch_size:
            raise DataError(f"batch size {batch_size} exceeds dataset size {n}")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.drop_last = drop_last
        self.epoch = 0
        self._queue: list[np.ndarray] = []

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        if not self._queue:
            self._queue = batches(self.n, self.batch_size, self.seed, self.epoch, self.drop_last)
            self.epoch += 1
        return self._queue.pop(0)
