"""Classification metrics: confusion-matrix statistics and one-vs-rest AUC.

Per-class F1 is defined as 0 when precision + recall is 0. The ROC area uses
trapezoidal integration with tied scores grouped into single steps, which
makes it identical to the rank-based (Mann-Whitney) formulation.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    accuracy: float
    precision: list
    recall: list
    f1: list
    macro_f1: float
    weighted_f1: float
    macro_auc: float
    confusion: np.ndarray
    parameter_count: int = 0
    wall_clock_seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        out = {
            "accuracy": self.accuracy,
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
            "f1": [float(v) for v in self.f1],
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "macro_auc": self.macro_auc,
            "confusion": self.confusion.astype(int).tolist(),
            "parameter_count": int(self.parameter_count),
        }
        if include_wall_clock:
            out["wall_clock_seconds"] = self.wall_clock_seconds
        out.update(self.extras)
        return out


def confusion_matrix(predictions, labels, k: int) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(labels, predictions):
        m[int(t), int(p)] += 1
    return m


def _binary_auc(y: np.ndarray, s: np.ndarray) -> float:
    """Trapezoidal ROC area with tied scores grouped into one step."""
    order = np.argsort(-s, kind="stable")
    y = y[order]
    s = s[order]
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    boundaries = np.nonzero(np.diff(s))[0]
    cut = np.r_[boundaries, len(y) - 1]
    tps = np.cumsum(y)[cut]
    fps = 1 + cut - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_auc_ovr(scores, labels, k: int, strict: bool = False) -> float:
    """Macro mean of per-class one-vs-rest ROC areas.

    Classes without both a positive and a negative example have no defined
    ROC; they are excluded with a warning, or rejected when ``strict``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    aucs = []
    for c in range(k):
        y = (labels == c).astype(np.int64)
        n_pos = int(y.sum())
        if n_pos == 0 or n_pos == len(y):
            if strict:
                raise ValueError(f"class {c} has no {'positives' if n_pos == 0 else 'negatives'}")
            warnings.warn(
                f"class {c} AUC undefined (needs both positives and negatives); excluded",
                stacklevel=2,
            )
            continue
        aucs.append(_binary_auc(y, scores[:, c]))
    if not aucs:
        return float("nan")
    return float(np.mean(aucs))


def roc_points(scores, labels, k: int) -> list[tuple]:
    """(class, threshold, fpr, tpr) rows for every distinct score level."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows = []
    for c in range(k):
        y = (labels == c).astype(np.int64)
        n_pos = int(y.sum())
        n_neg = len(y) - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        s = scores[:, c]
        order = np.argsort(-s, kind="stable")
        ys, ss = y[order], s[order]
        boundaries = np.nonzero(np.diff(ss))[0]
        cut = np.r_[boundaries, len(ys) - 1]
        tps = np.cumsum(ys)[cut]
        fps = 1 + cut - tps
        rows.append((c, float("inf"), 0.0, 0.0))
        for i, idx in enumerate(cut):
            rows.append((c, float(ss[idx]), float(fps[i] / n_neg), float(tps[i] / n_pos)))
    return rows


def evaluate_metrics(predictions, scores, labels, k: int) -> MetricsReport:
    """Accuracy, per-class precision/recall/F1, macro and weighted F1, macro AUC."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if not (len(predictions) == len(labels) == len(scores)):
        raise ValueError("predictions, scores and labels must have equal lengths")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels outside [0, {k})")
    if predictions.min() < 0 or predictions.max() >= k:
        raise ValueError(f"predictions outside [0, {k})")
    m = confusion_matrix(predictions, labels, k)
    total = m.sum()
    accuracy = float(np.trace(m) / total)
    precision, recall, f1 = [], [], []
    for c in range(k):
        col = m[:, c].sum()
        row = m[c, :].sum()
        p = m[c, c] / col if col else 0.0
        r = m[c, c] / row if row else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if p + r > 0 else 0.0)
    support = m.sum(axis=1)
    macro_f1 = float(np.mean(f1))
    weighted_f1 = float(np.sum(support * np.asarray(f1)) / total)
    macro_auc = roc_auc_ovr(scores, labels, k)
    return MetricsReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=macro_f1,
        weighted_f1=weighted_f1,
        macro_auc=macro_auc,
        confusion=m,
    )
