"""Clustering and prediction metrics: Rand index, entropy, mutual information,
accuracy, ROC curves and ROC AUC (binary, micro and macro one-vs-rest)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, DomainError, UndefinedMetricError
from .talent import TYPE_NAMES

log = logging.getLogger(__name__)


def _encode(labels) -> np.ndarray:
    return np.unique(np.asarray(labels), return_inverse=True)[1].ravel()


def contingency(truth, pred) -> np.ndarray:
    t = _encode(truth)
    p = _encode(pred)
    table = np.zeros((t.max() + 1, p.max() + 1), dtype=np.int64)
    np.add.at(table, (t, p), 1)
    return table


def _pairs(counts) -> int:
    return int((counts * (counts - 1) // 2).sum())


def rand_index(truth, pred) -> float:
    """(a + b) / C(n, 2), computed from the contingency table."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise DomainError("labelings have different lengths")
    n = truth.size
    if n < 2:
        raise DomainError("rand index needs at least two points")
    table = contingency(truth, pred)
    pairs = n * (n - 1) // 2
    same_both = _pairs(table)
    same_truth = _pairs(table.sum(axis=1))
    same_pred = _pairs(table.sum(axis=0))
    diff_both = pairs - same_truth - same_pred + same_both
    return (same_both + diff_both) / pairs


def entropy(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DomainError("entropy of an empty labeling")
    counts = np.unique(labels, return_counts=True)[1]
    p = counts / labels.size
    return float(-(p * np.log(p)).sum())


def mutual_information(truth, pred) -> Tuple[float, float]:
    """Raw MI in nats and MI normalised by the mean of the two entropies."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise DomainError("labelings have different lengths")
    if truth.size == 0:
        raise DomainError("mutual information of empty labelings")
    n = truth.size
    table = contingency(truth, pred).astype(np.float64)
    pij = table / n
    pi = pij.sum(axis=1, keepdims=True)
    pj = pij.sum(axis=0, keepdims=True)
    nz = pij > 0
    raw = float((pij[nz] * np.log(pij[nz] / (pi @ pj)[nz])).sum())
    raw = max(raw, 0.0)
    denom = 0.5 * (entropy(truth) + entropy(pred))
    if denom == 0.0:
        return raw, 1.0
    return raw, min(raw / denom, 1.0)


def accuracy(truth, pred) -> float:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise DimensionError("truth and prediction shapes differ")
    if truth.size == 0:
        raise DomainError("accuracy of an empty vector")
    return float(np.mean(truth == pred))


def binarize(scores, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(scores) >= threshold).astype(int)


def binarize_top_n(scores, n: int) -> np.ndarray:
    """Mark the ``n`` highest scores per column positive (ties by row order)."""
    scores = np.asarray(scores, dtype=np.float64)
    out = np.zeros(scores.shape, dtype=int)
    if scores.ndim == 1:
        out[np.argsort(-scores, kind="stable")[:n]] = 1
        return out
    for j in range(scores.shape[1]):
        out[np.argsort(-scores[:, j], kind="stable")[:n], j] = 1
    return out


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _check_binary(truth, scores):
    truth = np.asarray(truth).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if truth.shape != scores.shape:
        raise DimensionError("truth and scores differ in length")
    if not np.all(np.isin(truth, (0, 1))):
        raise DomainError("truth must be binary")
    pos = int(truth.sum())
    if pos == 0 or pos == truth.size:
        raise UndefinedMetricError("ROC AUC needs at least one positive and one negative")
    return truth.astype(int), scores


def roc_curve(truth, scores) -> RocCurve:
    """Sweep the threshold down through every distinct score."""
    truth, scores = _check_binary(truth, scores)
    tp, fp = _sweep(truth, scores)
    s = np.sort(scores)[::-1]
    thresholds = np.r_[np.inf, np.unique(s)[::-1]]
    return RocCurve(fp / fp[-1], tp / tp[-1], thresholds)


def _sweep(truth, scores):
    """Cumulative (TP, FP) counts at each distinct threshold, starting at (0, 0)."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = truth[order].astype(np.int64)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return np.r_[0, tp], np.r_[0, fp]


def roc_auc(truth, scores, return_curve: bool = False):
    """Trapezoidal area under the ROC curve; ties get half credit."""
    truth, scores = _check_binary(truth, scores)
    tp, fp = _sweep(truth, scores)
    # trapezoids in integer counts, one division at the end
    twice = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    area = twice / (2.0 * tp[-1] * fp[-1])
    if return_curve:
        return area, roc_curve(truth, scores)
    return area


def roc_auc_ranksum(truth, scores) -> float:
    """Mann-Whitney form: (R+ - n+(n+ + 1)/2) / (n+ n-), with midranks for ties."""
    truth, scores = _check_binary(truth, scores)
    ranks = rankdata(scores)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    u = ranks[truth == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_multi(truth, scores, mode: str = "micro") -> float:
    truth = np.asarray(truth)
    scores = np.asarray(scores, dtype=np.float64)
    if truth.shape != scores.shape or truth.ndim != 2:
        raise DimensionError("multi-label truth and scores must be equal-shaped matrices")
    if mode == "micro":
        return roc_auc(truth.ravel(), scores.ravel())
    if mode != "macro":
        raise DomainError(f"unknown averaging mode {mode!r}")
    per = per_type_auc(truth, scores)
    vals = [v for v in per if v is not None]
    if not vals:
        raise UndefinedMetricError("every column is single-class")
    return float(np.mean(vals))


def per_type_auc(truth, scores) -> List[Optional[float]]:
    out = []
    for j in range(truth.shape[1]):
        try:
            out.append(roc_auc(truth[:, j], scores[:, j]))
        except UndefinedMetricError:
            log.warning("column %d is single-class; excluded from macro ROC AUC", j)
            out.append(None)
    return out


def prediction_report(truth, scores, threshold: float = 0.5,
                      type_names: Sequence[str] = TYPE_NAMES) -> Dict:
    """Per-type accuracy and ROC AUC plus averages."""
    truth = np.asarray(truth).astype(int)
    scores = np.asarray(scores, dtype=np.float64)
    pred = binarize(scores, threshold)
    aucs = per_type_auc(truth, scores)
    per_type = {}
    for j, name in enumerate(type_names):
        per_type[name] = {
            "accuracy": accuracy(truth[:, j], pred[:, j]),
            "rocauc": aucs[j],
            "positives": int(truth[:, j].sum()),
        }
    valid = [a for a in aucs if a is not None]
    try:
        micro = roc_auc_multi(truth, scores, "micro")
    except UndefinedMetricError:
        micro = None
    return {
        "accuracy": accuracy(truth, pred),
        "rocauc_micro": micro,
        "rocauc_macro": float(np.mean(valid)) if valid else None,
        "per_type": per_type,
        "n": int(truth.shape[0]),
    }


def clustering_report(truth, pred) -> Dict:
    raw, norm = mutual_information(truth, pred)
    return {"rand_index": rand_index(truth, pred), "mi_raw": raw, "mi_normalized": norm}
