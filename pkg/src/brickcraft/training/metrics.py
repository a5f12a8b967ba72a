"""Threshold-swept ROC/PR curves and areas for binary scorers."""
from __future__ import annotations

import csv
from typing import NamedTuple

import numpy as np


class Curve(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray


def _sweep(labels, scores):
    y = np.asarray(labels, dtype=bool).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # one point per distinct threshold, so tied scores move the curve diagonally
    last = np.r_[np.flatnonzero(np.diff(s)), y.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return tp, fp, s[last], int(y.sum()), int((~y).sum())


def roc_curve(labels, scores) -> Curve:
    tp, fp, thr, pos, neg = _sweep(labels, scores)
    tpr = np.r_[0.0, tp / pos] if pos else np.r_[0.0, np.zeros_like(tp, dtype=float)]
    fpr = np.r_[0.0, fp / neg] if neg else np.r_[0.0, np.zeros_like(fp, dtype=float)]
    return Curve(fpr, tpr, np.r_[np.inf, thr])


def roc_auc(labels, scores) -> float:
    y = np.asarray(labels, dtype=bool)
    if y.all() or not y.any():
        raise ValueError("ROC-AUC needs both classes present")
    c = roc_curve(labels, scores)
    return float(np.trapezoid(c.y, c.x))


def pr_curve(labels, scores) -> Curve:
    """Precision (y) against recall (x), starting from recall 0 at precision 1."""
    tp, fp, thr, pos, _ = _sweep(labels, scores)
    prec = tp / np.maximum(tp + fp, 1)
    rec = tp / pos if pos else np.zeros_like(tp, dtype=float)
    return Curve(np.r_[0.0, rec], np.r_[1.0, prec], np.r_[np.inf, thr])


def average_precision(labels, scores) -> float:
    c = pr_curve(labels, scores)
    return float(np.sum(np.diff(c.x) * c.y[1:]))


def precision_recall(labels, scores, threshold: float = 0.5) -> tuple[float, float]:
    y = np.asarray(labels, dtype=bool).ravel()
    pred = np.asarray(scores).ravel() >= threshold
    tp = int(np.sum(pred & y))
    p = tp / pred.sum() if pred.sum() else 1.0
    r = tp / y.sum() if y.sum() else 1.0
    return float(p), float(r)


def write_curve_csv(path, curve: Curve, names=("x", "y")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "threshold"])
        for a, b, t in zip(curve.x, curve.y, curve.thresholds):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(t))])
