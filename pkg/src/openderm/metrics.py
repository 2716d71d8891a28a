"""Figures of merit for the decision engine.

Balanced accuracy is the headline metric (the challenge metric for the
imbalanced lesion task); accuracy, macro one-vs-rest AUC, confusion matrices,
and inverse-frequency class weights round out the report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels, EmptyMatrix, LabelOutOfRange, ZeroCount
from .taxonomy import ClassTaxonomy, DEFAULT_TAXONOMY


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Count matrix with rows = true class, columns = predicted class.

    Args:
        y_true: true class indices.
        y_pred: predicted class indices, same length.
        n_classes: matrix dimension; all labels must lie in [0, n_classes).

    Returns:
        (n_classes, n_classes) int64 array.
    """
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape:
        raise LabelOutOfRange(f"length mismatch: {t.shape} true vs {p.shape} predicted")
    if t.size and (t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    """Diagonal over row sums; NaN for classes with no true samples."""
    cm = np.asarray(cm)
    row = cm.sum(axis=1)
    out = np.full(cm.shape[0], np.nan)
    present = row > 0
    out[present] = cm.diagonal()[present] / row[present]
    return out


def balanced_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes that actually occur.

    Classes with zero true samples are excluded from the mean rather than
    contributing zero.
    """
    recalls = per_class_recall(cm)
    present = ~np.isnan(recalls)
    if not present.any():
        raise EmptyMatrix("no class has any true sample")
    return float(np.mean(recalls[present]))


def accuracy(cm: np.ndarray) -> float:
    """Trace over total count."""
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    return float(cm.trace() / total)


def _tied_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties assigned the average of their rank range."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(y_positive, scores) -> float:
    """One-vs-rest ROC AUC via the rank statistic.

    Equals the probability that a random positive outranks a random negative,
    ties counting one half: U / (n_pos * n_neg) where U is computed from the
    tied-rank sum of the positives. Exact and deterministic; invariant under
    strictly increasing transforms of the scores.
    """
    pos = np.asarray(y_positive, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative")
    ranks = _tied_ranks(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(y_true, proba) -> float:
    """Macro-average of the one-vs-rest AUCs over classes present in y_true.

    Classes with zero positives or zero negatives are skipped. Raises
    DegenerateLabels when fewer than two classes occur.
    """
    y = np.asarray(y_true, dtype=np.int64)
    X = np.asarray(proba, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("macro AUC needs at least two classes in the true labels")
    aucs = []
    for c in range(X.shape[1]):
        pos = y == c
        if pos.any() and not pos.all():
            aucs.append(binary_auc(pos, X[:, c]))
    return float(np.mean(aucs))


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency loss weights: w_c = N / (K * n_c).

    The more samples a class has, the lower its weight; the weighted mean is
    1 under the class-count distribution (sum of n_c * w_c equals N), so the
    overall loss scale is preserved.
    """
    n = np.asarray(counts, dtype=np.float64)
    if np.any(n <= 0):
        raise ZeroCount("every class count must be positive")
    return n.sum() / (len(n) * n)


@dataclass(frozen=True)
class EvaluationReport:
    """Everything the engine reports for one prediction set."""

    balanced_accuracy: float
    accuracy: float
    macro_auc: float | None
    confusion: np.ndarray
    per_class_recall: np.ndarray

    def to_dict(self, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> dict:
        labels = list(taxonomy.known_labels)
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "accuracy": self.accuracy,
            "macro_auc": self.macro_auc,
            "labels": labels,
            "confusion": self.confusion.tolist(),
            "per_class_recall": {
                lab: (None if np.isnan(r) else float(r))
                for lab, r in zip(labels, self.per_class_recall)
            },
        }

    def format_table(self, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> str:
        labels = taxonomy.known_labels
        width = max(5, max(len(lab) for lab in labels))
        lines = []
        auc_txt = "n/a" if self.macro_auc is None else f"{self.macro_auc:.3f}"
        lines.append(f"balanced accuracy: {self.balanced_accuracy:.3f}")
        lines.append(f"accuracy:          {self.accuracy:.3f}")
        lines.append(f"macro AUC:         {auc_txt}")
        lines.append("")
        header = " " * (width + 2) + " ".join(f"{lab:>{width}}" for lab in labels) + f"  {'recall':>6}"
        lines.append(header)
        for i, lab in enumerate(labels):
            row = " ".join(f"{int(v):>{width}}" for v in self.confusion[i])
            rec = self.per_class_recall[i]
            rec_txt = "  n/a " if np.isnan(rec) else f"{rec:.3f}"
            lines.append(f"{lab:>{width}}  {row}  {rec_txt}")
        return "\n".join(lines)


def evaluate(y_true, proba=None, y_pred=None, n_classes: int | None = None) -> EvaluationReport:
    """Build an EvaluationReport from true labels plus scores and/or predictions.

    y_pred defaults to the row argmax of proba. macro_auc is None when no
    probability matrix is supplied (majority-vote pipelines carry no scores).
    """
    y = np.asarray(y_true, dtype=np.int64)
    if proba is None and y_pred is None:
        raise EmptyMatrix("need proba or y_pred to evaluate")
    if proba is not None:
        proba = np.asarray(proba, dtype=np.float64)
        if n_classes is None:
            n_classes = proba.shape[1]
    if y_pred is None:
        y_pred = np.argmax(proba, axis=1)
    if n_classes is None:
        n_classes = int(max(y.max(), np.max(y_pred))) + 1
    cm = confusion_matrix(y, y_pred, n_classes)
    auc = macro_auc(y, proba) if proba is not None else None
    return EvaluationReport(
        balanced_accuracy=balanced_accuracy(cm),
        accuracy=accuracy(cm),
        macro_auc=auc,
        confusion=cm,
        per_class_recall=per_class_recall(cm),
    )
