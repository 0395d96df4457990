"""Discrepancy losses and the adversarial two-classifier training procedure.

One training iteration on a paired (source, target) mini-batch runs:

* step A: G, F1, F2 minimise the source cross entropy of both heads;
* step B: F1, F2 minimise source cross entropy minus the target discrepancy
  (G fixed), i.e. the heads are pushed apart on target samples;
* step C: G alone minimises the target discrepancy, ``n`` times on the same batch.

The ``grl`` variant folds B and C into one update by reversing the gradient
of the target features on their way into the heads.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .autograd import Tape, Tensor
from .data import BatchStream, LabeledDataset, UnlabeledDataset
from .errors import BatchSizeMismatch, ConfigError, DataError, LabelOutOfRange, ShapeMismatch
from .nn import Network, NetworkSpec, make_optimizer, toy_classifier_spec, toy_generator_spec

PROB_FLOOR = 1e-12
VARIANTS = ("three_step", "grl", "no_step_c", "source_only")


@dataclass
class TrainingConfig:
    n: int = 3
    num_classes: int = 2
    batch_size: int = 200
    optimizer: str = "adam"
    lr: float = 2e-4
    momentum: float = 0.9
    weight_decay: float = 0.0
    lambda_cb: float = 0.0
    discrepancy: str = "l1"
    variant: str = "three_step"
    max_iters: int = 5000
    eval_every: int = 100
    g_seed: int = 0
    f1_seed: int = 1
    f2_seed: int = 2
    data_seed: int = 3

    def validate(self) -> "TrainingConfig":
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lambda_cb < 0:
            raise ConfigError("lambda_cb must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.discrepancy not in ("l1", "l2"):
            raise ConfigError(f"discrepancy must be l1 or l2, got {self.discrepancy!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        return self

    @classmethod
    def seeded(cls, seed: int, **overrides) -> "TrainingConfig":
        """Config whose four seeds are derived from one base seed."""
        return cls(g_seed=4 * seed, f1_seed=4 * seed + 1, f2_seed=4 * seed + 2,
                   data_seed=4 * seed + 3, **overrides)


# ---------------------------------------------------------------- losses

def cross_entropy_loss(tape: Tape, logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"{labels.shape} labels for logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {logits.shape[1]})")
    logp = tape.log(tape.softmax(logits, axis=1), floor=PROB_FLOOR)
    return tape.neg(tape.mean_all(tape.gather(logp, labels)))


def _check_pair(p1: Tensor, p2: Tensor) -> None:
    if p1.shape != p2.shape or p1.data.ndim != 2:
        raise ShapeMismatch(f"probability batches {p1.shape} and {p2.shape} must match as [B, K]")


def discrepancy_l1(tape: Tape, p1: Tensor, p2: Tensor) -> Tensor:
    """Mean over the batch of (1/K) sum_k |p1 - p2|."""
    _check_pair(p1, p2)
    return tape.mean_all(tape.abs(tape.sub(p1, p2)))


def discrepancy_l2(tape: Tape, p1: Tensor, p2: Tensor) -> Tensor:
    _check_pair(p1, p2)
    d = tape.sub(p1, p2)
    return tape.mean_all(tape.mul(d, d))


DISCREPANCIES = {"l1": discrepancy_l1, "l2": discrepancy_l2}


def class_balance_loss(tape: Tape, p: Tensor) -> Tensor:
    """-(1/B) sum_b sum_k log p[b, k]; smallest when every row is uniform."""
    logp = tape.log(p, floor=PROB_FLOOR)
    return tape.neg(tape.mean_all(tape.sum_axis(logp, axis=1)))


# ---------------------------------------------------------------- models

@dataclass
class MCDModel:
    g: Network
    f1: Network
    f2: Network
    opt_g: object = None
    opt_f1: object = None
    opt_f2: object = None

    @classmethod
    def build(cls, cfg: TrainingConfig, g_spec: NetworkSpec, f_spec: NetworkSpec) -> "MCDModel":
        model = cls(Network(g_spec, cfg.g_seed), Network(f_spec, cfg.f1_seed), Network(f_spec, cfg.f2_seed))
        model.reset_optimizers(cfg)
        return model

    def reset_optimizers(self, cfg: TrainingConfig) -> None:
        def opt(net):
            return make_optimizer(cfg.optimizer, net.params, cfg.lr, cfg.momentum, cfg.weight_decay)
        self.opt_g, self.opt_f1, self.opt_f2 = opt(self.g), opt(self.f1), opt(self.f2)

    def nets(self) -> tuple[Network, Network, Network]:
        return self.g, self.f1, self.f2

    def train(self) -> None:
        for net in self.nets():
            net.train()

    def eval(self) -> None:
        for net in self.nets():
            net.eval()

    def probs(self, tape: Tape, x: Tensor) -> tuple[Tensor, Tensor]:
        feat = self.g(x, tape)
        return tape.softmax(self.f1(feat, tape), axis=1), tape.softmax(self.f2(feat, tape), axis=1)

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Argmax labels of both heads, evaluated in the current mode."""
        tape = Tape()
        feat = self.g(Tensor(x), tape)
        return self.f1(feat, tape).data.argmax(axis=1), self.f2(feat, tape).data.argmax(axis=1)


def _weighted(tape: Tape, loss: Tensor, weight: float) -> Tensor:
    return loss if weight == 1.0 else tape.scale(loss, weight)


def _balance_term(tape: Tape, p1: Tensor, p2: Tensor, cfg: TrainingConfig) -> Tensor:
    cb = tape.add(class_balance_loss(tape, p1), class_balance_loss(tape, p2))
    return _weighted(tape, cb, cfg.lambda_cb)


# --- objectives; each builds its loss on ``tape`` and returns (objective, parts)

def source_objective(tape: Tape, model: MCDModel, xs: np.ndarray, ys: np.ndarray):
    feat = model.g(Tensor(xs), tape)
    ce1 = cross_entropy_loss(tape, model.f1(feat, tape), ys)
    ce2 = cross_entropy_loss(tape, model.f2(feat, tape), ys)
    return tape.add(ce1, ce2), {"ce1": ce1.item(), "ce2": ce2.item()}


def step_b_objective(tape: Tape, model: MCDModel, xs, ys, xt, cfg: TrainingConfig):
    if len(xs) != len(xt):
        raise BatchSizeMismatch(f"{len(xs)} source vs {len(xt)} target samples")
    cls_loss, parts = source_objective(tape, model, xs, ys)
    p1, p2 = model.probs(tape, Tensor(xt))
    adv = DISCREPANCIES[cfg.discrepancy](tape, p1, p2)
    obj = tape.sub(cls_loss, adv)
    if cfg.lambda_cb > 0:
        obj = tape.add(obj, _balance_term(tape, p1, p2, cfg))
    return obj, {**parts, "adv": adv.item()}


def step_c_objective(tape: Tape, model: MCDModel, xt, cfg: TrainingConfig):
    p1, p2 = model.probs(tape, Tensor(xt))
    adv = DISCREPANCIES[cfg.discrepancy](tape, p1, p2)
    obj = adv
    if cfg.lambda_cb > 0:
        obj = tape.add(obj, _balance_term(tape, p1, p2, cfg))
    return obj, {"adv": adv.item()}


def grl_objective(tape: Tape, model: MCDModel, xs, ys, xt, cfg: TrainingConfig):
    """Single loss whose gradient is d(L_cls - L_adv) for the heads and
    d(L_cls + L_adv) for the generator."""
    if len(xs) != len(xt):
        raise BatchSizeMismatch(f"{len(xs)} source vs {len(xt)} target samples")
    cls_loss, parts = source_objective(tape, model, xs, ys)
    feat_t = model.g(Tensor(xt), tape)
    rev = tape.grad_reverse(feat_t)
    p1 = tape.softmax(model.f1(rev, tape), axis=1)
    p2 = tape.softmax(model.f2(rev, tape), axis=1)
    adv = DISCREPANCIES[cfg.discrepancy](tape, p1, p2)
    obj = tape.sub(cls_loss, adv)
    if cfg.lambda_cb > 0:
        # the balance term is minimised by every network, so it bypasses the reversal
        q1 = tape.softmax(model.f1(feat_t, tape), axis=1)
        q2 = tape.softmax(model.f2(feat_t, tape), axis=1)
        obj = tape.add(obj, _balance_term(tape, q1, q2, cfg))
    return obj, {**parts, "adv": adv.item()}


def gradients(objective: Callable, model: MCDModel, *args):
    """Run ``objective`` on a fresh tape; return (per-network grads, parts)."""
    tape = Tape()
    loss, parts = objective(tape, model, *args)
    grads = tape.backward(loss)
    parts["objective"] = loss.item()
    return {"g": model.g.grads(grads), "f1": model.f1.grads(grads), "f2": model.f2.grads(grads)}, parts


# --- steps

def step_a(model: MCDModel, xs, ys) -> dict:
    grads, parts = gradients(source_objective, model, xs, ys)
    model.opt_g.step(grads["g"])
    model.opt_f1.step(grads["f1"])
    model.opt_f2.step(grads["f2"])
    return parts


def step_b(model: MCDModel, xs, ys, xt, cfg: TrainingConfig) -> dict:
    grads, parts = gradients(step_b_objective, model, xs, ys, xt, cfg)
    model.opt_f1.step(grads["f1"])
    model.opt_f2.step(grads["f2"])
    return parts


def step_c(model: MCDModel, xt, cfg: TrainingConfig) -> float:
    """``cfg.n`` generator updates on the same target batch; returns the last L_adv."""
    adv = float("nan")
    for _ in range(cfg.n):
        grads, parts = gradients(step_c_objective, model, xt, cfg)
        model.opt_g.step(grads["g"])
        adv = parts["adv"]
    return adv


def grl_step(model: MCDModel, xs, ys, xt, cfg: TrainingConfig) -> dict:
    grads, parts = gradients(grl_objective, model, xs, ys, xt, cfg)
    model.opt_g.step(grads["g"])
    model.opt_f1.step(grads["f1"])
    model.opt_f2.step(grads["f2"])
    return parts


# ---------------------------------------------------------------- metrics

METRIC_COLUMNS = ("iter", "loss_cls", "loss_adv", "acc_src_f1", "acc_tgt_f1", "acc_tgt_f2")


@dataclass
class MetricsRow:
    iter: int
    loss_cls: float
    loss_adv: float
    acc_src_f1: float
    acc_tgt_f1: float
    acc_tgt_f2: float


@dataclass
class MetricsLog:
    rows: list[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.iter <= self.rows[-1].iter:
            raise ValueError("metric iterations must be strictly increasing")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([r.iter] + [repr(float(getattr(r, c))) for c in METRIC_COLUMNS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsLog":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != METRIC_COLUMNS:
            raise DataError(f"unexpected metrics header {header}")
        log = cls()
        for r in reader:
            log.append(MetricsRow(int(r[0]), *map(float, r[1:])))
        return log


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.count_nonzero(pred == labels)) / len(labels)


def evaluate(model: MCDModel, source: LabeledDataset, target: UnlabeledDataset,
             target_eval: LabeledDataset, cfg: TrainingConfig, iteration: int) -> MetricsRow:
    """Eval-mode snapshot; leaves the model in train mode afterwards."""
    model.eval()
    try:
        tape = Tape()
        cls_loss, _ = source_objective(tape, model, source.features, source.labels)
        src_pred, _ = model.predict(source.features)
        p1, p2 = model.probs(tape, Tensor(target.features))
        adv = DISCREPANCIES[cfg.discrepancy](tape, p1, p2).item()
        t1, t2 = model.predict(target_eval.features)
    finally:
        model.train()
    return MetricsRow(iteration, cls_loss.item(), adv, accuracy(src_pred, source.labels),
                      accuracy(t1, target_eval.labels), accuracy(t2, target_eval.labels))


# ---------------------------------------------------------------- training loop

@dataclass
class TrainResult:
    model: MCDModel
    log: MetricsLog
    target_acc: float

    @property
    def nets(self):
        return self.model.nets()


def _stream_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def train(cfg: TrainingConfig, source: LabeledDataset, target: UnlabeledDataset,
          target_eval: LabeledDataset, g_spec: NetworkSpec | None = None,
          f_spec: NetworkSpec | None = None,
          progress: Callable[[MetricsRow], None] | None = None) -> TrainResult:
    """Run ``cfg.max_iters`` paired mini-batch iterations of the chosen variant.

    Reported target accuracy is that of head F1.
    """
    cfg.validate()
    if not (source.dim == target.dim == target_eval.dim):
        raise DataError(f"feature dims differ: {source.dim}, {target.dim}, {target_eval.dim}")
    if source.labels.size and source.labels.max() >= cfg.num_classes:
        raise DataError(f"source labels exceed num_classes={cfg.num_classes}")
    g_spec = g_spec if g_spec is not None else toy_generator_spec(source.dim)
    f_spec = f_spec if f_spec is not None else toy_classifier_spec(num_classes=cfg.num_classes)
    model = MCDModel.build(cfg, g_spec, f_spec)
    model.train()
    log = MetricsLog()

    src_stream = BatchStream(len(source), cfg.batch_size, _stream_seed(cfg.data_seed, 0))
    tgt_stream = BatchStream(len(target), cfg.batch_size, _stream_seed(cfg.data_seed, 1))
    for it in range(1, cfg.max_iters + 1):
        si, ti = next(src_stream), next(tgt_stream)
        xs, ys, xt = source.features[si], source.labels[si], target.features[ti]
        if cfg.variant == "grl":
            grl_step(model, xs, ys, xt, cfg)
        else:
            step_a(model, xs, ys)
            if cfg.variant != "source_only":
                step_b(model, xs, ys, xt, cfg)
            if cfg.variant == "three_step":
                step_c(model, xt, cfg)
        if it % cfg.eval_every == 0 or it == cfg.max_iters:
            row = evaluate(model, source, target, target_eval, cfg, it)
            log.append(row)
            if progress is not None:
                progress(row)

    model.eval()
    pred, _ = model.predict(target_eval.features)
    model.train()
    return TrainResult(model, log, accuracy(pred, target_eval.labels))


def config_fields() -> Sequence[str]:
    return [f.name for f in fields(TrainingConfig)]


def config_dict(cfg: TrainingConfig) -> dict:
    return asdict(cfg)
