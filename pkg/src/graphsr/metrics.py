"""Classification metrics: accuracy, macro-F1, macro one-vs-rest AUC-ROC."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass
class EvalReport:
    acc: float
    macro_f1: float
    auc_roc: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> EvalReport:
        return cls(**d)


def confusion_counts(y_true: np.ndarray, y_pred: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class true positives, false positives, false negatives."""
    cm = np.zeros((m, m), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    tp = np.diag(cm).copy()
    return tp, cm.sum(axis=0) - tp, cm.sum(axis=1) - tp


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def per_class_f1(y_true: np.ndarray, y_pred: np.ndarray, m: int) -> np.ndarray:
    # 0 when the class never occurs and is never predicted
    tp, fp, fn = confusion_counts(y_true, y_pred, m)
    return _safe_div(2 * tp, 2 * tp + fp + fn)


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, m: int) -> float:
    return float(np.mean(per_class_f1(y_true, y_pred, m)))


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    n_pos = int(positive.sum())
    n_neg = positive.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc_ovr(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Unweighted mean over classes of one-vs-rest AUC.

    Classes without both positives and negatives in ``y_true`` are skipped.
    """
    aucs = [binary_auc(scores[:, c], y_true == c) for c in range(scores.shape[1])]
    aucs = [a for a in aucs if not np.isnan(a)]
    return float(np.mean(aucs)) if aucs else float("nan")


def classification_report(y_true: np.ndarray, scores: np.ndarray) -> EvalReport:
    """Metrics from class scores (probabilities); predictions are the argmax."""
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_true.shape[0] == 0:
        raise ValueError("cannot evaluate an empty node set")
    m = scores.shape[1]
    y_pred = np.argmax(scores, axis=1)
    tp, fp, fn = confusion_counts(y_true, y_pred, m)
    f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
    return EvalReport(
        acc=float(np.mean(y_pred == y_true)),
        macro_f1=float(np.mean(f1)),
        auc_roc=macro_auc_ovr(y_true, scores),
        precision=_safe_div(tp, tp + fp).tolist(),
        recall=_safe_div(tp, tp + fn).tolist(),
        f1=f1.tolist(),
        support=(tp + fn).tolist(),
    )
