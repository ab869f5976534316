"""Confusion-matrix metrics, one-vs-rest ROC/AUC, and report emission.

Conventions: one-vs-rest framing per class; macro (unweighted) averages;
balanced accuracy is the mean of per-class recalls; any 0/0 division yields
0 and adds a flag to the report rather than raising.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (k, k) int64; rows = true class, columns = predicted

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise ValueError("confusion matrix must be square and non-empty")
        if np.any(c < 0):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    precision: np.ndarray        # (k,)
    recall: np.ndarray           # (k,)
    f_score: np.ndarray          # (k,)
    macro_precision: float
    macro_recall: float
    macro_f_score: float
    balanced_accuracy: float
    confusion: ConfusionMatrix
    per_class_auc: list[float | None] = field(default_factory=list)
    roc_curves: list = field(default_factory=list)  # (fpr, tpr) arrays or None
    class_names: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def confusion(true_labels, predicted_labels, k: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError("true and predicted labels must be equal-length vectors")
    if t.size == 0:
        raise DataError("cannot evaluate zero samples")
    if np.any((t < 0) | (t >= k)) or np.any((p < 0) | (p >= k)):
        raise ValueError(f"label outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _safe_div(num: float, den: float, what: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(f"{what}: 0/0 division reported as 0")
        return 0.0
    return num / den


def macro_metrics(cm: ConfusionMatrix,
                  class_names: list[str] | None = None) -> MetricsReport:
    """One-vs-rest precision/recall/F per class plus macro averages and
    balanced accuracy (mean per-class recall)."""
    if cm.total == 0:
        raise DataError("all-zero confusion matrix")
    k = cm.k
    flags: list[str] = []
    precision = np.zeros(k)
    recall = np.zeros(k)
    f_score = np.zeros(k)
    for c in range(k):
        tp = float(cm.counts[c, c])
        fp = float(cm.counts[:, c].sum() - cm.counts[c, c])
        fn = float(cm.counts[c, :].sum() - cm.counts[c, c])
        precision[c] = _safe_div(tp, tp + fp, f"precision[{c}]", flags)
        recall[c] = _safe_div(tp, tp + fn, f"recall[{c}]", flags)
        f_score[c] = _safe_div(2.0 * precision[c] * recall[c],
                               precision[c] + recall[c], f"f_score[{c}]", flags)
    return MetricsReport(
        precision=precision, recall=recall, f_score=f_score,
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f_score=float(np.mean(f_score)),
        balanced_accuracy=float(np.mean(recall)),
        confusion=cm,
        class_names=list(class_names) if class_names else
        [f"class{c}" for c in range(k)],
        flags=flags)


# ---------------------------------------------------------------------------
# ROC / AUC


def _midranks(s: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their block."""
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0  # mean of 1-based ranks i+1..j+1
        i = j + 1
    return ranks


def auc_from_scores(scores, positive_mask) -> float:
    """Rank-based AUC: P(random positive outscores random negative), ties at
    half credit. Exactly equivalent to exhaustive pairwise counting."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive_mask, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = int(s.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    rank_sum = float(_midranks(s)[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_curve_points(scores, positive_mask):
    """(FPR, TPR) at every distinct threshold, descending, from (0,0) to (1,1)."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive_mask, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = int(s.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs at least one positive and one negative")
    order = np.argsort(-s, kind="stable")
    sorted_pos = pos[order]
    sorted_s = s[order]
    fpr = [0.0]
    tpr = [0.0]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        tp += int(sorted_pos[i:j + 1].sum())
        fp += (j - i + 1) - int(sorted_pos[i:j + 1].sum())
        tpr.append(tp / n_pos)
        fpr.append(fp / n_neg)
        i = j + 1
    return np.array(fpr), np.array(tpr)


def roc_auc(scores, true_labels):
    """Per-class one-vs-rest AUC and ROC curves from per-sample probability
    vectors. Returns (auc list, curve list, flags); a class with no positives
    or no negatives gets None entries plus a flag."""
    p = np.asarray(scores, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.int64)
    if p.ndim != 2 or p.shape[0] != y.size:
        raise ValueError("scores must be (n, k) aligned with true_labels")
    row_sums = p.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise DataError("score rows must be probability vectors summing to 1")
    k = p.shape[1]
    if np.any((y < 0) | (y >= k)):
        raise ValueError(f"label outside [0, {k})")
    aucs: list[float | None] = []
    curves: list = []
    flags: list[str] = []
    for c in range(k):
        mask = y == c
        if mask.all() or not mask.any():
            aucs.append(None)
            curves.append(None)
            flags.append(f"auc[{c}]: undefined (class absent from one side)")
            continue
        aucs.append(auc_from_scores(p[:, c], mask))
        curves.append(roc_curve_points(p[:, c], mask))
    return aucs, curves, flags


def attach_roc(report: MetricsReport, scores, true_labels) -> MetricsReport:
    aucs, curves, flags = roc_auc(scores, true_labels)
    report.per_class_auc = aucs
    report.roc_curves = curves
    report.flags.extend(flags)
    return report


# ---------------------------------------------------------------------------
# report emission


def report_as_dict(report: MetricsReport) -> dict:
    return {
        "balanced_accuracy": report.balanced_accuracy,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f_score": report.macro_f_score,
        "per_class": [
            {"name": report.class_names[c],
             "precision": float(report.precision[c]),
             "recall": float(report.recall[c]),
             "f_score": float(report.f_score[c])}
            for c in range(report.confusion.k)
        ],
        "auc": [None if a is None else float(a) for a in report.per_class_auc]
        if report.per_class_auc else [None] * report.confusion.k,
        "confusion": report.confusion.counts.tolist(),
        "flags": list(report.flags),
    }


def emit_report(report: MetricsReport, path, format: str = "json") -> None:
    """Write the report as JSON (fixed key order) or a flat CSV with one row
    per class plus a macro row."""
    if format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_as_dict(report), fh, indent=2)
            fh.write("\n")
        return
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "precision", "recall", "f_score", "auc",
                         "balanced_accuracy"])
        aucs = report.per_class_auc or [None] * report.confusion.k
        for c in range(report.confusion.k):
            writer.writerow([report.class_names[c],
                             repr(float(report.precision[c])),
                             repr(float(report.recall[c])),
                             repr(float(report.f_score[c])),
                             "" if aucs[c] is None else repr(float(aucs[c])),
                             ""])
        writer.writerow(["macro",
                         repr(report.macro_precision),
                         repr(report.macro_recall),
                         repr(report.macro_f_score),
                         "",
                         repr(report.balanced_accuracy)])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        return
    raise ValueError(f"unknown report format {format!r}")
