"""Exact checks of the source/target error bound on finite hypothesis classes.

The hypothesis class is the set of decision stumps that behave differently on
the pooled sample.  Every quantity is computed from integer counts over the
empirical distributions, so the bound is checked exactly rather than
estimated.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .autograd import Tape, Tensor
from .errors import EmptyHypothesisSet, EnumerationCapExceeded, NonBinaryLabels, TooManyFeatures

MAX_FEATURES = 4
MAX_HYPOTHESES = 5000
_BLOCK = 512


@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float
    polarity: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.polarity * (x[:, self.feature] - self.threshold) > 0).astype(np.int8)


class HypothesisSet:
    def __init__(self, stumps: list[Stump]):
        self.stumps = list(stumps)

    def __len__(self) -> int:
        return len(self.stumps)

    def __iter__(self):
        return iter(self.stumps)

    def predictions(self, x: np.ndarray) -> np.ndarray:
        """[|H|, N] matrix of 0/1 outputs."""
        if not self.stumps:
            raise EmptyHypothesisSet("hypothesis set is empty")
        x = np.asarray(x, dtype=np.float64)
        feat = np.array([s.feature for s in self.stumps])
        thr = np.array([s.threshold for s in self.stumps])
        pol = np.array([s.polarity for s in self.stumps])
        return (pol[:, None] * (x[:, feat].T - thr[:, None]) > 0).astype(np.int8)


def enumerate_stumps(source, target, cap: int = MAX_HYPOTHESES) -> HypothesisSet:
    """All behaviourally distinct stumps on the pooled source/target sample.

    Per feature: thresholds at midpoints of consecutive distinct values, both
    polarities; plus one all-0 and one all-1 stump (threshold below the minimum
    of feature 0).
    """
    pooled = np.vstack([np.asarray(getattr(source, "features", source)),
                        np.asarray(getattr(target, "features", target))])
    d = pooled.shape[1]
    if d > MAX_FEATURES:
        raise TooManyFeatures(f"{d} features; stump enumeration supports at most {MAX_FEATURES}")
    below = float(pooled[:, 0].min()) - 1.0
    stumps = [Stump(0, below, 1), Stump(0, below, -1)]
    for j in range(d):
        values = np.unique(pooled[:, j])
        mids = (values[:-1] + values[1:]) / 2.0
        for tau in mids:
            stumps.append(Stump(j, float(tau), 1))
            stumps.append(Stump(j, float(tau), -1))
        if len(stumps) > cap:
            raise EnumerationCapExceeded(f"more than {cap} hypotheses")
    return HypothesisSet(stumps)


def _features(ds) -> np.ndarray:
    return np.asarray(getattr(ds, "features", ds), dtype=np.float64)


def _max_pair_gap(ps: np.ndarray, pt: np.ndarray) -> Fraction:
    """max over (h, h') of |P_S[h != h'] - P_T[h != h']| as an exact fraction."""
    ns, nt = ps.shape[1], pt.shape[1]
    # disagreement count = a + a' - 2 * both; 0/1 dot products are exact in
    # float32 while counts stay below 2**24
    dtype = np.float32 if max(ns, nt) < 2**24 else np.float64
    fs, ft = ps.astype(dtype), pt.astype(dtype)
    a_s = ps.sum(axis=1).astype(np.int64)
    a_t = pt.sum(axis=1).astype(np.int64)
    gap = 0
    for lo in range(0, len(ps), _BLOCK):
        hi = lo + _BLOCK
        both_s = np.rint(fs[lo:hi] @ fs.T).astype(np.int64)
        both_t = np.rint(ft[lo:hi] @ ft.T).astype(np.int64)
        dis_s = a_s[lo:hi, None] + a_s[None, :] - 2 * both_s
        dis_t = a_t[lo:hi, None] + a_t[None, :] - 2 * both_t
        gap = max(gap, int(np.abs(dis_s * nt - dis_t * ns).max()))
    return Fraction(gap, ns * nt)


def empirical_hdh(hypotheses: HypothesisSet, source, target) -> float:
    """2 * max over pairs of the difference in disagreement rates."""
    return float(2 * _max_pair_gap(hypotheses.predictions(_features(source)),
                                   hypotheses.predictions(_features(target))))


def _max_single_gap(ps: np.ndarray, pt: np.ndarray) -> Fraction:
    ns, nt = ps.shape[1], pt.shape[1]
    zeros_s = ns - ps.sum(axis=1).astype(np.int64)
    zeros_t = nt - pt.sum(axis=1).astype(np.int64)
    return Fraction(int(np.abs(zeros_s * nt - zeros_t * ns).max()), ns * nt)


def empirical_h_distance(hypotheses: HypothesisSet, source, target) -> float:
    """2 * max over h of |P_S[h != 1] - P_T[h != 1]|."""
    return float(2 * _max_single_gap(hypotheses.predictions(_features(source)),
                                     hypotheses.predictions(_features(target))))


@dataclass
class BoundReport:
    risk_source: np.ndarray
    risk_target: np.ndarray
    d_h: float
    d_hdh: float
    lambda_ideal: float
    bound_slack: float
    holds: bool
    num_hypotheses: int

    def to_text(self) -> str:
        lines = [
            f"holds={'true' if self.holds else 'false'}",
            f"bound_slack={self.bound_slack!r}",
            f"d_h={self.d_h!r}",
            f"d_hdh={self.d_hdh!r}",
            f"lambda_ideal={self.lambda_ideal!r}",
            f"num_hypotheses={self.num_hypotheses}",
            f"min_risk_source={float(self.risk_source.min())!r}",
            f"min_risk_target={float(self.risk_target.min())!r}",
            f"max_risk_target={float(self.risk_target.max())!r}",
        ]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def verify_bound(hypotheses: HypothesisSet, source, target) -> BoundReport:
    """Check R_T(h) <= R_S(h) + d_hdh / 2 + lambda for every h in the set."""
    ys, yt = np.asarray(source.labels), np.asarray(target.labels)
    if not (np.isin(ys, (0, 1)).all() and np.isin(yt, (0, 1)).all()):
        raise NonBinaryLabels("bound verification needs labels in {0, 1}")
    ps = hypotheses.predictions(_features(source))
    pt = hypotheses.predictions(_features(target))
    ns, nt = len(ys), len(yt)
    err_s = (ps != ys[None, :]).sum(axis=1).astype(np.int64)
    err_t = (pt != yt[None, :]).sum(axis=1).astype(np.int64)
    half_hdh = _max_pair_gap(ps, pt)
    # joint risk in units of 1/(ns*nt), minimised exactly over integers
    joint = err_s * nt + err_t * ns
    lam = Fraction(int(joint.min()), ns * nt)
    slack_num = err_s * nt - err_t * ns
    slack = Fraction(int(slack_num.min()), ns * nt) + half_hdh + lam
    return BoundReport(
        risk_source=err_s / ns,
        risk_target=err_t / nt,
        d_h=float(2 * _max_single_gap(ps, pt)),
        d_hdh=float(2 * half_hdh),
        lambda_ideal=float(lam),
        bound_slack=float(slack),
        holds=float(slack) >= -1e-12,
        num_hypotheses=len(hypotheses),
    )


def network_pair_discrepancy_proxy(g, f1, f2, source, target) -> tuple[float, float, float]:
    """Argmax disagreement of F1∘G and F2∘G on each domain, and 2|dis_S - dis_T|."""

    def disagreement(x):
        tape = Tape()
        feat = g(Tensor(x), tape)
        return float(np.mean(f1(feat, tape).data.argmax(1) != f2(feat, tape).data.argmax(1)))

    dis_s = disagreement(_features(source))
    dis_t = disagreement(_features(target))
    return dis_s, dis_t, 2.0 * abs(dis_s - dis_t)
