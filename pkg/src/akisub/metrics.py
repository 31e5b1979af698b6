"""Ranking and threshold metrics for the evaluation harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError


@dataclass
class PrecisionRecall:
    precision: float
    recall: float
    no_predicted_positives: bool = False


@dataclass
class MetricRecord:
    model_id: str
    fold_id: int
    auc: float
    precision: float
    recall: float


def _split_classes(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise MetricError(f"scores {s.shape} and labels {y.shape} must align")
    if not set(np.unique(y)) == {0, 1}:
        raise MetricError(f"labels must contain both classes, got {set(np.unique(y))}")
    return s, y


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count 0.5.

    Computed through midranks (Mann-Whitney U), which equals brute-force
    pairwise counting exactly.
    """
    s, y = _split_classes(scores, labels)
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def precision_recall(scores, labels, cutoff: float = 0.5) -> PrecisionRecall:
    """Precision/recall at `cutoff` (predicted positive when score >= cutoff).

    With no predicted positives, precision is undefined and reported as 0 with
    the flag set.
    """
    s, y = _split_classes(scores, labels)
    predicted = s >= cutoff
    tp = int((predicted & (y == 1)).sum())
    fp = int((predicted & (y == 0)).sum())
    fn = int((~predicted & (y == 1)).sum())
    if tp + fp == 0:
        return PrecisionRecall(precision=0.0, recall=0.0, no_predicted_positives=True)
    return PrecisionRecall(precision=tp / (tp + fp), recall=tp / (tp + fn))
