"""Confusion counts, ROC curves, AUC and best-epoch selection.

A sample is predicted positive when ``score >= threshold``; the detector uses
the same rule.  ROC AUC is computed from integer counts, so it equals the
Mann-Whitney pairwise statistic (ties counted one half) exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput, SingleClass


def predict(scores, threshold: float) -> np.ndarray:
    return (np.asarray(scores, dtype=np.float64) >= threshold).astype(np.int8)


@dataclass(frozen=True)
class Confusion:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn)

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp)

    @property
    def youden_j(self) -> float:
        return self.sensitivity + self.specificity - 1.0

    def to_json(self) -> dict:
        return {"threshold": _finite_or_str(self.threshold), "tp": self.tp, "fp": self.fp,
                "tn": self.tn, "fn": self.fn,
                "sensitivity": self.sensitivity, "specificity": self.specificity}


def _finite_or_str(x: float):
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if len(s) == 0:
        raise EmptyInput("no scores")
    if len(s) != len(y):
        raise ValueError("scores and labels lengths differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    return s, y.astype(np.int8)


def confusion_at(scores, labels, threshold: float) -> Confusion:
    s, y = _check(scores, labels)
    if y.all() or not y.any():
        raise SingleClass("sensitivity/specificity need both classes")
    pred = s >= threshold
    tp = int(np.count_nonzero(pred & (y == 1)))
    fp = int(np.count_nonzero(pred & (y == 0)))
    return Confusion(float(threshold), tp, fp, int(np.count_nonzero(y == 0)) - fp,
                     int(np.count_nonzero(y == 1)) - tp)


@dataclass
class EvalReport:
    n_pos: int
    n_neg: int
    roc: list[tuple[float, float]]
    thresholds: list[float]
    auc: float
    at_threshold: Confusion | None = None

    def to_json(self) -> dict:
        out = {"n_pos": self.n_pos, "n_neg": self.n_neg, "auc": self.auc,
               "roc": [list(p) for p in self.roc]}
        if self.at_threshold is not None:
            out["at_threshold"] = self.at_threshold.to_json()
        return out


def _roc_counts(s: np.ndarray, y: np.ndarray):
    """Cumulative (fp, tp) counts at each distinct threshold, highest first, plus the thresholds."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each run of equal scores
    last = np.flatnonzero(np.diff(s_sorted) != 0)
    last = np.concatenate([last, [len(s_sorted) - 1]])
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    return np.concatenate([[0], fp]).astype(np.int64), np.concatenate([[0], tp]).astype(np.int64), s_sorted[last]


def roc_auc(scores, labels, threshold: float | None = None) -> EvalReport:
    """ROC by sweeping every distinct score (plus +/-inf) and trapezoidal AUC."""
    s, y = _check(scores, labels)
    P = int(y.sum())
    N = len(y) - P
    if P == 0 or N == 0:
        raise SingleClass("ROC needs both classes")
    fp, tp, thr = _roc_counts(s, y)
    # twice the trapezoid area in count units; integer arithmetic keeps it exact
    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = area2 / (2 * P * N)
    roc = [(float(a) / N, float(b) / P) for a, b in zip(fp, tp)] + [(1.0, 1.0)]
    thresholds = [float("inf")] + thr.tolist() + [float("-inf")]
    conf = confusion_at(s, y, threshold) if threshold is not None else None
    return EvalReport(P, N, roc, thresholds, auc, conf)


def pairwise_auc(scores, labels) -> float:
    """O(P*N) Mann-Whitney statistic; reference implementation for tests."""
    s, y = _check(scores, labels)
    pos, neg = s[y == 1], s[y == 0]
    if not len(pos) or not len(neg):
        raise SingleClass("AUC needs both classes")
    diff = pos[:, None] - neg[None, :]
    return float((np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)) / diff.size)


def youden_threshold(scores, labels) -> float:
    """Threshold among the observed scores that maximises sensitivity + specificity - 1.

    Ties go to the highest threshold.
    """
    s, y = _check(scores, labels)
    P = int(y.sum())
    N = len(y) - P
    if P == 0 or N == 0:
        raise SingleClass("Youden's J needs both classes")
    fp, tp, thr = _roc_counts(s, y)
    j = tp[1:] / P - fp[1:] / N
    return float(thr[int(np.argmax(j))])


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_auc: float
    val_auc: float
    val_sensitivity: float = float("nan")
    val_specificity: float = float("nan")
    train_loss: float = float("nan")
    lr: float = float("nan")

    def to_json(self) -> dict:
        return {k: (v if not isinstance(v, float) or np.isfinite(v) else None)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "EpochMetrics":
        return cls(**{k: (float("nan") if v is None else v) for k, v in obj.items()})


def select_best_epoch(history: Sequence[EpochMetrics]) -> tuple[int, EpochMetrics]:
    """Earliest epoch with the maximum validation AUC."""
    if not history:
        raise EmptyInput("empty training history")
    vals = [h.val_auc for h in history]
    best = max(vals)
    i = vals.index(best)
    return i, history[i]
