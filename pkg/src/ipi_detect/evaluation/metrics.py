"""Binary detection metrics with the positive class = IPI."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

METRIC_NAMES = ("f1", "precision", "recall", "fpr", "fnr", "accuracy")


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    f1: float
    precision: float
    recall: float
    fpr: float
    fnr: float
    accuracy: float
    undefined: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


def _ratio(num: int, den: int) -> float:
    return num / den if den else float("nan")


def confusion(predictions, labels) -> tuple[int, int, int, int]:
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    return int((p & y).sum()), int((p & ~y).sum()), int((~p & y).sum()), int((~p & ~y).sum())


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> MetricsReport:
    """Metrics from a confusion matrix; undefined ratios are NaN and listed, never filled in."""
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn)
    fpr = _ratio(fp, fp + tn)
    fnr = _ratio(fn, fn + tp)
    acc = _ratio(tp + tn, tp + fp + fn + tn)
    rep = MetricsReport(tp, fp, fn, tn, f1, precision, recall, fpr, fnr, acc)
    rep.undefined = [m for m in METRIC_NAMES if math.isnan(getattr(rep, m))]
    return rep


def compute_metrics(predictions, labels) -> MetricsReport:
    return metrics_from_counts(*confusion(predictions, labels))


def summarize(reports, metrics=METRIC_NAMES) -> dict:
    """Mean and std (population) of each metric across folds, ignoring undefined values."""
    out = {}
    for m in metrics:
        vals = np.array([getattr(r, m) if isinstance(r, MetricsReport) else r[m] for r in reports], dtype=float)
        vals = vals[~np.isnan(vals)]
        out[m] = {
            "mean": float(vals.mean()) if len(vals) else None,
            "std": float(vals.std()) if len(vals) else None,
            "n": int(len(vals)),
        }
    return out
