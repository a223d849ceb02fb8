"""Detection quality metrics: precision/recall/F1, ROC AUC, point adjustment."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

__all__ = ["f1_score", "precision_recall_f1", "auc", "point_adjust", "true_segments"]


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both inputs are 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def precision_recall_f1(
    pred: np.ndarray, truth: np.ndarray
) -> tuple[float, float, float]:
    """Pointwise precision, recall, and F1 of binary detections.

    Zero denominators yield 0 rather than NaN so metric sweeps stay finite.
    """
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall, f1_score(precision, recall)


def auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic; ties count half.

    Equivalent to the probability that a random anomalous timestamp scores
    above a random normal one. Requires both classes present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape:
        raise ValueError("scores and truth must have equal length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: truth contains a single class")
    ranks = rankdata(scores)  # average ranks on ties
    rank_sum = float(ranks[truth].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def true_segments(truth: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous runs of 1s as (start, end) inclusive pairs."""
    truth = np.asarray(truth).astype(bool)
    edges = np.flatnonzero(np.diff(truth.astype(np.int8)))
    starts = list(edges[truth[edges + 1]] + 1)
    ends = list(edges[~truth[edges + 1]])
    if truth[0]:
        starts.insert(0, 0)
    if truth[-1]:
        ends.append(truth.size - 1)
    return list(zip(starts, ends))


def point_adjust(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Credit whole true segments: any hit inside a segment flags all of it.

    Detections outside true segments are untouched. Disabled by default in
    reports; exposed so both protocols can be compared side by side.
    """
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    adjusted = pred.copy()
    for start, end in true_segments(truth):
        if adjusted[start : end + 1].any():
            adjusted[start : end + 1] = True
    return adjusted.astype(np.int8)
