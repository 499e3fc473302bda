"""Confusion-matrix metrics and one-vs-rest ROC curves."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from limbnet.errors import ValidationError


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0] if self.counts.ndim == 2 else -1
        if self.counts.shape != (k, k) or np.any(self.counts < 0):
            raise ValidationError(f"confusion matrix must be square and non-negative, "
                                  f"got {self.counts.tolist()}")

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int = 3) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


@dataclass
class MetricsReport:
    """Percentages in [0, 100]; ``auc`` (one per class, in [0, 1]) is filled separately."""

    precision: list[float]
    recall: list[float]
    f1: list[float]
    accuracy: float
    balanced_accuracy: float
    auc: list[float] | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "accuracy": self.accuracy, "balanced_accuracy": self.balanced_accuracy,
                "auc": self.auc, "flags": self.flags}


def _ratio(num: float, den: float, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def metrics_from_confusion(matrix: ConfusionMatrix | np.ndarray) -> MetricsReport:
    """Per-class precision/recall/F1, accuracy and balanced accuracy, in percent.

    A metric whose denominator is zero is reported as 0 and named in ``flags``.
    """
    if not isinstance(matrix, ConfusionMatrix):
        matrix = ConfusionMatrix(matrix)
    m = matrix.counts.astype(np.float64)
    total = m.sum()
    if total == 0:
        raise ValidationError("confusion matrix is empty")
    flags: list[str] = []
    tp = np.diag(m)
    precision, recall, f1 = [], [], []
    for c in range(len(m)):
        p = _ratio(tp[c], m[:, c].sum(), f"precision[{c}]: class never predicted", flags)
        r = _ratio(tp[c], m[c].sum(), f"recall[{c}]: class absent", flags)
        f = _ratio(2 * p * r, p + r, f"f1[{c}]: precision and recall both zero", flags)
        precision.append(float(100.0 * p))
        recall.append(float(100.0 * r))
        f1.append(float(100.0 * f))
    return MetricsReport(precision, recall, f1, float(100.0 * tp.sum() / total),
                         float(np.mean(recall)), flags=flags)


@dataclass
class RocCurve:
    class_index: int
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_dict(self) -> dict:
        # +inf (the starting point) has no JSON spelling
        thresholds = [None if np.isinf(t) else float(t) for t in self.thresholds]
        return {"class": self.class_index, "thresholds": thresholds,
                "fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(), "auc": self.auc}


def roc_auc(probabilities, labels, class_index: int) -> RocCurve:
    """One-vs-rest ROC for ``class_index``.

    ``probabilities`` is ``(n, k)`` (or ``(n,)`` scores for the class). Each
    distinct score is one threshold step, so ties move both rates at once.
    The first point is (0, 0) at threshold +inf.
    """
    scores = np.asarray(probabilities, dtype=np.float64)
    if scores.ndim == 2:
        scores = scores[:, class_index]
    positive = np.asarray(labels) == class_index
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError(f"class {class_index} needs both positive and negative examples")
    order = np.argsort(-scores, kind="stable")
    s, pos = scores[order], positive[order]
    tps, fps = np.cumsum(pos), np.cumsum(~pos)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]   # last index of each distinct score
    tpr = np.r_[0.0, tps[last] / n_pos]
    fpr = np.r_[0.0, fps[last] / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    return RocCurve(class_index, thresholds, fpr, tpr, float(np.trapezoid(tpr, fpr)))
