"""Fully-connected networks, initialization, optimizers and checkpoint files."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .autograd import Gradients, Tape, Tensor
from .errors import BadSpec, DataError, MissingGrad, ShapeMismatch


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class BatchNorm1d:
    features: int
    eps: float = 1e-5
    momentum: float = 0.1


@dataclass(frozen=True)
class ReLU:
    pass


LayerSpec = Linear | BatchNorm1d | ReLU
NetworkSpec = Sequence[LayerSpec]


def _check_spec(spec: NetworkSpec) -> tuple[int, int]:
    width = None
    in_dim = None
    for i, layer in enumerate(spec):
        if isinstance(layer, Linear):
            if layer.in_features < 1 or layer.out_features < 1:
                raise BadSpec(f"layer {i}: non-positive Linear dims")
            if width is not None and layer.in_features != width:
                raise BadSpec(f"layer {i}: expects {layer.in_features} inputs, previous width {width}")
            if in_dim is None:
                in_dim = layer.in_features
            width = layer.out_features
        elif isinstance(layer, BatchNorm1d):
            if width is None or layer.features != width:
                raise BadSpec(f"layer {i}: BatchNorm1d({layer.features}) after width {width}")
        elif not isinstance(layer, ReLU):
            raise BadSpec(f"layer {i}: unknown layer {layer!r}")
    if in_dim is None:
        raise BadSpec("network needs at least one Linear layer")
    return in_dim, width


def toy_generator_spec(in_dim: int = 2, hidden: int = 15) -> list[LayerSpec]:
    return [Linear(in_dim, hidden), ReLU(), Linear(hidden, hidden), ReLU()]


def toy_classifier_spec(hidden: int = 15, num_classes: int = 2) -> list[LayerSpec]:
    return [Linear(hidden, hidden), ReLU(), Linear(hidden, num_classes)]


def digit_generator_spec(in_dim: int = 256, hidden: int = 400) -> list[LayerSpec]:
    return [Linear(in_dim, hidden), BatchNorm1d(hidden), ReLU(),
            Linear(hidden, hidden), BatchNorm1d(hidden), ReLU()]


def digit_classifier_spec(in_dim: int = 400, hidden: int = 100, num_classes: int = 10) -> list[LayerSpec]:
    return [Linear(in_dim, hidden), BatchNorm1d(hidden), ReLU(), Linear(hidden, num_classes)]


class Network:
    """An ordered stack of layers with named parameters.

    Parameter names are ``"<layer index>.<weight|bias|gamma|beta>"``; BN running
    statistics live in ``buffers`` as ``"<index>.running_mean"`` / ``"running_var"``.
    Linear weights are stored ``[in, out]`` so forward is ``x @ W + b``.
    """

    def __init__(self, spec: NetworkSpec, seed: int):
        self.spec = list(spec)
        self.in_dim, self.out_dim = _check_spec(self.spec)
        self.seed = seed
        self.training = True
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        for i, layer in enumerate(self.spec):
            if isinstance(layer, Linear):
                bound = np.sqrt(6.0 / layer.in_features)
                w = rng.uniform(-bound, bound, size=(layer.in_features, layer.out_features))
                self.params[f"{i}.weight"] = Tensor(w, name=f"{i}.weight")
                self.params[f"{i}.bias"] = Tensor(np.zeros(layer.out_features), name=f"{i}.bias")
            elif isinstance(layer, BatchNorm1d):
                self.params[f"{i}.gamma"] = Tensor(np.ones(layer.features), name=f"{i}.gamma")
                self.params[f"{i}.beta"] = Tensor(np.zeros(layer.features), name=f"{i}.beta")
                self.buffers[f"{i}.running_mean"] = np.zeros(layer.features)
                self.buffers[f"{i}.running_var"] = np.ones(layer.features)

    def train(self) -> "Network":
        self.training = True
        return self

    def eval(self) -> "Network":
        self.training = False
        return self

    def forward(self, x: Tensor, tape: Tape) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"network expects [B, {self.in_dim}], got {list(x.shape)}")
        h = x
        for i, layer in enumerate(self.spec):
            if isinstance(layer, Linear):
                h = tape.add_bias(tape.matmul(h, self.params[f"{i}.weight"]), self.params[f"{i}.bias"])
            elif isinstance(layer, BatchNorm1d):
                running = (self.buffers[f"{i}.running_mean"], self.buffers[f"{i}.running_var"])
                h = tape.batch_norm(h, self.params[f"{i}.gamma"], self.params[f"{i}.beta"],
                                    eps=layer.eps, momentum=layer.momentum,
                                    training=self.training, running=running)
            else:
                h = tape.relu(h)
        return h

    __call__ = forward

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        """Forward without keeping a record around; respects the current mode."""
        return self.forward(Tensor(x), Tape()).data

    def named_parameters(self) -> Iterable[tuple[str, Tensor]]:
        return self.params.items()

    def grads(self, gradients: Gradients) -> dict[str, np.ndarray]:
        """Pick this network's parameter gradients out of a tape's gradient map."""
        return {name: gradients.wrt(p) for name, p in self.params.items()}

    def state(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.params.items()}
        out.update({name: b.copy() for name, b in self.buffers.items()})
        return out

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        expected = set(self.params) | set(self.buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise BadSpec(f"state does not match network (missing {missing}, unexpected {extra})")
        for name, value in state.items():
            target = self.params[name].data if name in self.params else self.buffers[name]
            if target.shape != np.shape(value):
                raise BadSpec(f"{name}: shape {np.shape(value)} != {target.shape}")
        for name, value in state.items():
            if name in self.params:
                self.params[name].data = np.array(value, dtype=np.float64)
            else:
                self.buffers[name][...] = value


def init_network(spec: NetworkSpec, seed: int) -> Network:
    return Network(spec, seed)


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for name in self.params:
            if name not in grads:
                raise MissingGrad(name)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class MomentumSGD:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.t = 0
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for name in self.params:
            if name not in grads:
                raise MissingGrad(name)
        self.t += 1
        for name, p in self.params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.velocity[name] = self.momentum * self.velocity[name] + g
            p.data = p.data - self.lr * self.velocity[name]


def make_optimizer(kind: str, params: Mapping[str, Tensor], lr: float,
                   momentum: float = 0.9, weight_decay: float = 0.0):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return MomentumSGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")


# Checkpoint container: magic, then records of
#   u64 name_len | name (utf-8) | u64 rank | u64 extents[rank] | f64 values[prod]
# all little-endian, read until end of file.
CHECKPOINT_MAGIC = b"MCDNET1\n"


def write_checkpoint(path: str | Path, state: Mapping[str, np.ndarray]) -> None:
    chunks = [CHECKPOINT_MAGIC]
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not an MCDNET1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    state: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise DataError(f"{path}: truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return state


def save_network(net: Network, path: str | Path) -> None:
    write_checkpoint(path, net.state())


def load_network(spec: NetworkSpec, path: str | Path) -> Network:
    net = Network(spec, seed=0)
    net.load_state(read_checkpoint(path))
    return net
