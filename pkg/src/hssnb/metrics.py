"""Confusion matrix, overall/average accuracy, Cohen's kappa and run summaries.

Rows are the true class, columns the predicted class.  Class labels are
1-based; label 0 (unlabeled) is never scored.
"""

import json

import numpy as np


class MetricError(ValueError):
    pass


class ConfusionMatrix:
    def __init__(self, n_classes):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    @classmethod
    def from_labels(cls, true, pred, n_classes):
        cm = cls(n_classes)
        cm.update(true, pred)
        return cm

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def _check(self, labels):
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 1 or labels.max() > self.n_classes):
            raise MetricError(f"labels must lie in 1..{self.n_classes}")
        return labels.astype(np.int64)

    def accumulate(self, true_label, predicted_label):
        self.update([true_label], [predicted_label])
        return self

    def update(self, true, pred):
        true = self._check(true).ravel()
        pred = self._check(pred).ravel()
        if true.shape != pred.shape:
            raise MetricError("true and predicted label arrays differ in length")
        np.add.at(self.counts, (true - 1, pred - 1), 1)
        return self

    def merge(self, other):
        if other.n_classes != self.n_classes:
            raise MetricError("cannot merge matrices of different size")
        out = ConfusionMatrix(self.n_classes)
        out.counts = self.counts + other.counts
        return out


def _require_total(cm):
    if cm.total < 1:
        raise MetricError("confusion matrix is empty")
    return cm.total


def overall_accuracy(cm):
    total = _require_total(cm)
    return float(np.trace(cm.counts) / total)


def average_accuracy(cm):
    """Mean per-class recall."""
    _require_total(cm)
    rows = cm.counts.sum(axis=1)
    empty = np.flatnonzero(rows == 0)
    if empty.size:
        raise MetricError(f"class {int(empty[0]) + 1} has no samples")
    return float(np.mean(np.diag(cm.counts) / rows))


def kappa(cm):
    total = _require_total(cm)
    p_o = np.trace(cm.counts) / total
    p_e = float(cm.counts.sum(axis=1) @ cm.counts.sum(axis=0)) / total**2
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise MetricError("kappa undefined: chance agreement is 1")
    return float((p_o - p_e) / (1 - p_e))


def scores(cm):
    return {"kappa": kappa(cm), "aa": average_accuracy(cm), "oa": overall_accuracy(cm)}


def _summary(values):
    arr = np.asarray(values, dtype=np.float64) * 100
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def report(runs):
    """Text row ``kappa | aa | oa``, each as percent mean +- sample std."""
    if not runs:
        raise ValueError("need at least one run")
    cols = list(zip(*runs))
    parts = []
    for col in cols:
        mean, std = _summary(col)
        parts.append(f"{mean:.2f} ± {std:.1f}")
    return " | ".join(parts)


def report_json(runs):
    """``{"kappa": {"mean", "std"}, "aa": ..., "oa": ...}`` in percent."""
    if not runs:
        raise ValueError("need at least one run")
    out = {}
    for name, col in zip(("kappa", "aa", "oa"), zip(*runs)):
        mean, std = _summary(col)
        out[name] = {"mean": mean, "std": std}
    out["runs"] = len(runs)
    return out


def report_table(runs, title=None):
    """Aligned plain-text table with a header row."""
    head = f"{'Kappa':>14} | {'AA':>14} | {'OA':>14}"
    cells = report(runs).split(" | ")
    row = " | ".join(f"{c:>14}" for c in cells)
    lines = [title] if title else []
    lines += [head, "-" * len(head), row]
    return "\n".join(lines)


def dumps_report(runs):
    return json.dumps(report_json(runs), indent=2, sort_keys=True)
