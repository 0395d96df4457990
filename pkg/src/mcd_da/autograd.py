"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied to :class:`Tensor` values in
topological order.  ``Tape.backward`` walks the record once in reverse and
returns a :class:`Gradients` map keyed by node id.

Only a closed set of primitives is supported (see :class:`Primitive`); each
has a forward formula and an exact analytic gradient.  There is no implicit
broadcasting except in ``AddBias`` (matrix plus row vector).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import DomainError, NotScalar, ShapeMismatch, StaleRecord


class Tensor:
    """A float64 array that can take part in a recorded computation."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data: Any, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if 0 in arr.shape:
            raise ShapeMismatch(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), name=self.name)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


class Primitive(enum.Enum):
    MATMUL = "MatMul"
    ADD_BIAS = "AddBias"
    RELU = "ReLU"
    SOFTMAX = "Softmax"
    LOG = "Log"
    ABS = "Abs"
    NEG = "Neg"
    ADD = "Add"
    SUB = "Sub"
    MUL = "Mul"
    MEAN_ALL = "MeanAll"
    SUM_AXIS = "SumAxis"
    BATCH_NORM = "BatchNorm1d"
    INDEX_GATHER = "IndexGather"
    GRAD_REVERSE = "GradReverse"


@dataclass
class Node:
    kind: Primitive
    inputs: tuple[int, ...]
    output: int
    saved: tuple = ()
    params: dict = field(default_factory=dict)


def _same_shape(kind: Primitive, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{kind.value}: shapes {a.shape} and {b.shape} differ")


# Forward rules: (inputs, params) -> (output, saved values for backward).

def _fwd_matmul(xs, p):
    a, b = xs
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"MatMul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, (a, b)


def _fwd_add_bias(xs, p):
    x, b = xs
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeMismatch(f"AddBias: bias {b.shape} does not fit {x.shape}")
    return x + b, ()


def _fwd_relu(xs, p):
    (x,) = xs
    mask = x > 0
    return x * mask, (mask,)


def _fwd_softmax(xs, p):
    (x,) = xs
    axis = p.get("axis", -1)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return y, (y,)


def _fwd_log(xs, p):
    (x,) = xs
    floor = p.get("floor")
    if floor is None:
        if np.any(x <= 0):
            raise DomainError("Log of a non-positive value")
        return np.log(x), (x, None)
    keep = x > floor
    return np.log(np.where(keep, x, floor)), (x, keep)


def _fwd_abs(xs, p):
    (x,) = xs
    return np.abs(x), (np.sign(x),)


def _fwd_neg(xs, p):
    return -xs[0], ()


def _fwd_add(xs, p):
    _same_shape(Primitive.ADD, *xs)
    return xs[0] + xs[1], ()


def _fwd_sub(xs, p):
    _same_shape(Primitive.SUB, *xs)
    return xs[0] - xs[1], ()


def _fwd_mul(xs, p):
    _same_shape(Primitive.MUL, *xs)
    return xs[0] * xs[1], (xs[0], xs[1])


def _fwd_mean_all(xs, p):
    (x,) = xs
    return np.array([x.mean()]), (x.shape,)


def _fwd_sum_axis(xs, p):
    (x,) = xs
    axis = p["axis"]
    if x.ndim < 2:
        raise ShapeMismatch("SumAxis needs at least two dimensions")
    return x.sum(axis=axis), (x.shape,)


def _fwd_batch_norm(xs, p):
    x, gamma, beta = xs
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != gamma.shape:
        raise ShapeMismatch(f"BatchNorm1d: parameters do not fit input {x.shape}")
    eps = p["eps"]
    running = p.get("running")
    if p.get("training", True):
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if running is not None:
            m = p["momentum"]
            running[0][...] = (1.0 - m) * running[0] + m * mean
            running[1][...] = (1.0 - m) * running[1] + m * var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        return gamma * xhat + beta, (xhat, inv_std, gamma, True)
    mean, var = running
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, False)


def _fwd_index_gather(xs, p):
    (x,) = xs
    idx = np.asarray(p["indices"])
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeMismatch(f"IndexGather: {idx.shape} indices for input {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ShapeMismatch("IndexGather: index out of range")
    rows = np.arange(x.shape[0])
    return x[rows, idx], (x.shape, rows, idx)


def _fwd_grad_reverse(xs, p):
    return xs[0].copy(), ()


# Backward rules: (upstream grad, saved, params) -> per-input grads.

def _bwd_matmul(g, s, p):
    a, b = s
    return g @ b.T, a.T @ g


def _bwd_add_bias(g, s, p):
    return g, g.sum(axis=0)


def _bwd_relu(g, s, p):
    return (g * s[0],)


def _bwd_softmax(g, s, p):
    (y,) = s
    axis = p.get("axis", -1)
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def _bwd_log(g, s, p):
    x, keep = s
    if keep is None:
        return (g / x,)
    return (np.where(keep, g / np.where(keep, x, 1.0), 0.0),)


def _bwd_abs(g, s, p):
    return (g * s[0],)


def _bwd_neg(g, s, p):
    return (-g,)


def _bwd_add(g, s, p):
    return g, g


def _bwd_sub(g, s, p):
    return g, -g


def _bwd_mul(g, s, p):
    a, b = s
    return g * b, g * a


def _bwd_mean_all(g, s, p):
    (shape,) = s
    n = int(np.prod(shape))
    return (np.full(shape, g[0] / n),)


def _bwd_sum_axis(g, s, p):
    (shape,) = s
    return (np.broadcast_to(np.expand_dims(g, p["axis"]), shape).copy(),)


def _bwd_batch_norm(g, s, p):
    xhat, inv_std, gamma, training = s
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    dxhat = g * gamma
    if training:
        n = g.shape[0]
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta


def _bwd_index_gather(g, s, p):
    shape, rows, idx = s
    dx = np.zeros(shape)
    dx[rows, idx] = g
    return (dx,)


def _bwd_grad_reverse(g, s, p):
    return (-g,)


_RULES: dict[Primitive, tuple[Callable, Callable, int]] = {
    Primitive.MATMUL: (_fwd_matmul, _bwd_matmul, 2),
    Primitive.ADD_BIAS: (_fwd_add_bias, _bwd_add_bias, 2),
    Primitive.RELU: (_fwd_relu, _bwd_relu, 1),
    Primitive.SOFTMAX: (_fwd_softmax, _bwd_softmax, 1),
    Primitive.LOG: (_fwd_log, _bwd_log, 1),
    Primitive.ABS: (_fwd_abs, _bwd_abs, 1),
    Primitive.NEG: (_fwd_neg, _bwd_neg, 1),
    Primitive.ADD: (_fwd_add, _bwd_add, 2),
    Primitive.SUB: (_fwd_sub, _bwd_sub, 2),
    Primitive.MUL: (_fwd_mul, _bwd_mul, 2),
    Primitive.MEAN_ALL: (_fwd_mean_all, _bwd_mean_all, 1),
    Primitive.SUM_AXIS: (_fwd_sum_axis, _bwd_sum_axis, 1),
    Primitive.BATCH_NORM: (_fwd_batch_norm, _bwd_batch_norm, 3),
    Primitive.INDEX_GATHER: (_fwd_index_gather, _bwd_index_gather, 1),
    Primitive.GRAD_REVERSE: (_fwd_grad_reverse, _bwd_grad_reverse, 1),
}


class Gradients(dict):
    """Map from node id to gradient array.

    Ids registered on the tape but not on a path to the loss read as zeros.
    """

    def __init__(self, tape: "Tape"):
        super().__init__()
        self._tape = tape

    def __missing__(self, node_id: int) -> np.ndarray:
        if not 0 <= node_id < len(self._tape._tensors):
            raise StaleRecord(f"node id {node_id} is not part of this record")
        return np.zeros(self._tape._tensors[node_id].shape)

    def wrt(self, tensor: Tensor) -> np.ndarray:
        return self[self._tape.node_id(tensor)]


class Tape:
    """Append-only computation record.

    Tensors get a node id the first time they are seen by the tape, either as
    an input to a primitive or as a primitive's output.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._tensors: list[Tensor] = []
        self._ids: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def node_id(self, tensor: Tensor) -> int:
        try:
            return self._ids[id(tensor)]
        except KeyError:
            raise StaleRecord(f"{tensor!r} was never recorded on this tape") from None

    def _register(self, tensor: Tensor) -> int:
        key = id(tensor)
        nid = self._ids.get(key)
        if nid is None:
            nid = len(self._tensors)
            self._tensors.append(tensor)
            self._ids[key] = nid
        return nid

    def apply(self, kind: Primitive, *inputs: Tensor, **params) -> Tensor:
        forward, _, arity = _RULES[kind]
        if len(inputs) != arity:
            raise ShapeMismatch(f"{kind.value} takes {arity} inputs, got {len(inputs)}")
        out_data, saved = forward([t.data for t in inputs], params)
        in_ids = tuple(self._register(t) for t in inputs)
        out = Tensor.__new__(Tensor)
        out.data = out_data
        out.grad = None
        out.name = None
        out_id = self._register(out)
        self.nodes.append(Node(kind, in_ids, out_id, saved, params))
        return out

    # Thin wrappers so model code reads naturally.
    def matmul(self, a, b):
        return self.apply(Primitive.MATMUL, a, b)

    def add_bias(self, x, b):
        return self.apply(Primitive.ADD_BIAS, x, b)

    def relu(self, x):
        return self.apply(Primitive.RELU, x)

    def softmax(self, x, axis=-1):
        return self.apply(Primitive.SOFTMAX, x, axis=axis)

    def log(self, x, floor=None):
        return self.apply(Primitive.LOG, x, floor=floor)

    def abs(self, x):
        return self.apply(Primitive.ABS, x)

    def neg(self, x):
        return self.apply(Primitive.NEG, x)

    def add(self, a, b):
        return self.apply(Primitive.ADD, a, b)

    def sub(self, a, b):
        return self.apply(Primitive.SUB, a, b)

    def mul(self, a, b):
        return self.apply(Primitive.MUL, a, b)

    def scale(self, x, c: float):
        return self.mul(x, Tensor(np.full(x.shape, float(c))))

    def mean_all(self, x):
        return self.apply(Primitive.MEAN_ALL, x)

    def sum_axis(self, x, axis):
        return self.apply(Primitive.SUM_AXIS, x, axis=axis)

    def batch_norm(self, x, gamma, beta, eps=1e-5, momentum=0.1, training=True, running=None):
        return self.apply(Primitive.BATCH_NORM, x, gamma, beta, eps=eps,
                          momentum=momentum, training=training, running=running)

    def gather(self, x, indices):
        return self.apply(Primitive.INDEX_GATHER, x, indices=indices)

    def grad_reverse(self, x):
        return self.apply(Primitive.GRAD_REVERSE, x)

    def backward(self, loss: Tensor, store: bool = False) -> Gradients:
        """Accumulate d(loss)/d(node) for every recorded node.

        With ``store=True`` each leaf tensor (one never produced by a
        primitive) also gets its gradient written to ``.grad``.
        """
        if loss.data.size != 1:
            raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
        grads = Gradients(self)
        grads[self.node_id(loss)] = np.ones(loss.shape)
        for node in reversed(self.nodes):
            g = grads.get(node.output)
            if g is None:
                continue
            in_grads = _RULES[node.kind][1](g, node.saved, node.params)
            for nid, gi in zip(node.inputs, in_grads):
                prev = grads.get(nid)
                grads[nid] = gi if prev is None else prev + gi
        if store:
            produced = {n.output for n in self.nodes}
            for nid, t in enumerate(self._tensors):
                if nid not in produced:
                    t.grad = grads[nid]
        return grads


def apply_primitive(kind: Primitive, inputs: Sequence[Tensor], record: Tape, **params) -> Tensor:
    return record.apply(kind, *inputs, **params)


def backward(record: Tape, loss: Tensor) -> Gradients:
    return record.backward(loss)


@dataclass
class CheckReport:
    max_rel_error: float
    passed: bool
    checked: int
    excluded: list[int]

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"{verdict}: max rel err {self.max_rel_error:.3e} over {self.checked} "
                f"coords ({len(self.excluded)} excluded)")


def grad_check(
    function: Callable[[Tape, Tensor], Tensor],
    point: Tensor | np.ndarray,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-3,
) -> CheckReport:
    """Compare the tape gradient of ``function`` with central differences.

    ``function(tape, x)`` must return a scalar tensor.  The relative error of
    each coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    Coordinates where the two one-sided differences disagree by more than
    ``tolerance`` are treated as kinks and excluded instead of failing.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    def value(arr):
        return function(Tape(), Tensor(arr)).item()

    tape = Tape()
    x = Tensor(x0.copy())
    analytic = tape.backward(function(tape, x)).wrt(x).reshape(-1)

    f0 = value(x0)
    flat = x0.reshape(-1)
    worst = 0.0
    excluded = []
    for i in range(flat.size):
        hi = flat.copy()
        lo = flat.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = value(hi.reshape(x0.shape))
        f_lo = value(lo.reshape(x0.shape))
        right = (f_hi - f0) / step
        left = (f0 - f_lo) / step
        if abs(right - left) > tolerance * max(abs(right), abs(left), floor) + 1e3 * step:
            excluded.append(i)
            continue
        numeric = (f_hi - f_lo) / (2 * step)
        denom = max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    checked = flat.size - len(excluded)
    return CheckReport(worst, worst < tolerance, checked, excluded)
