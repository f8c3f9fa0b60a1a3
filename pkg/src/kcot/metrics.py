"""Top-k precision/recall/F1 and mean average precision for multi-label scores.

Ties are broken deterministically: by lower label index when selecting the
top-k labels of a sample, and by lower sample index when ranking samples for
a class.

Averages are taken with :func:`math.fsum`, so AP and mAP are correctly
rounded and do not depend on summation order.
"""

from __future__ import annotations

import math

import numpy as np


def _inputs(S, Y):
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y))
    if S.shape != Y.shape:
        raise ValueError(f"scores {S.shape} and labels {Y.shape} differ in shape")
    if not np.all((Y == 0) | (Y == 1)):
        raise ValueError("labels must be binary")
    return S, Y.astype(bool)


def top_k(S, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores per row (stable: equal scores keep label order)."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    return np.argsort(-S, axis=1, kind="stable")[:, :k]


def precision_recall_f1_at_k(S, Y, k: int = 3):
    """``(P@k, R@k, F1@k)`` over a batch.

    ``P@k = hits / (B * k)``; ``R@k = hits / total positives``, where samples
    without positives add nothing to the recall denominator (and recall is 0
    if no sample has a positive). F1 is the harmonic mean, 0 if either is 0.
    """
    S, Y = _inputs(S, Y)
    B, N = S.shape
    if not 1 <= k <= N:
        raise ValueError(f"k must be in [1, {N}], got {k}")
    top = top_k(S, k)
    hits = int(np.take_along_axis(Y, top, axis=1).sum())
    precision = hits / (B * k)
    n_pos = int(Y.sum())
    recall = hits / n_pos if n_pos else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def average_precision(scores, labels) -> float:
    """AP of one ranked list: mean precision at the rank of each positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if not labels.any():
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    rel = labels[order]
    ranks = np.flatnonzero(rel) + 1
    return math.fsum(np.arange(1, ranks.size + 1) / ranks) / ranks.size


def mean_average_precision(S, Y) -> float:
    """Mean over classes of the per-class AP across samples; classes with no positive are skipped."""
    S, Y = _inputs(S, Y)
    aps = [average_precision(S[:, i], Y[:, i]) for i in range(S.shape[1]) if Y[:, i].any()]
    if not aps:
        raise ValueError("no class has a positive sample")
    return math.fsum(aps) / len(aps)
