"""Inputs to the KCOT solve: cost, label-presence marginal, teacher plan.

All functions take :class:`~kcot.types.FeatureSet` / ``LabelSet`` instances
or plain ``(rows, d)`` arrays.
"""

from __future__ import annotations

import numpy as np

from .types import (
    TransportPlan,
    as_cost,
    cosine_similarity_matrix,
    label_vector,
    row_softmax,
)


def build_cost(visual, labels, tau: float = 0.01) -> np.ndarray:
    """Reversed softmax similarity, ``C[k, i] = 1 - softmax_i(cos(x_k, t_i) / tau)``.

    Rows of ``1 - C`` are probability vectors over labels. With a single
    label the cost is identically zero.
    """
    sims = cosine_similarity_matrix(visual, labels)
    return as_cost(1.0 - row_softmax(sims, tau))


def lpd_marginal(visual, labels, tau: float = 0.01) -> np.ndarray:
    """Label-presence weights over regions.

    Each region is scored by its best label similarity; the scores are
    softmax-normalized across regions, so regions far from every label
    receive little mass in the source marginal.
    """
    sims = cosine_similarity_matrix(visual, labels)
    w = row_softmax(sims.max(axis=1), tau)
    w.setflags(write=False)
    return w


def teacher_plan(frozen_visual, frozen_labels, y, tau: float = 0.01) -> TransportPlan:
    """Frozen-feature assignment masked by the ground-truth labels.

    Columns of positive labels keep the frozen row-softmax assignment; every
    negative-label column is filled with the global minimum of that
    assignment. The result is not renormalized, so its rows need not sum to
    one. It is strictly positive, which keeps ``log`` in the transformed
    cost finite.
    """
    sims = cosine_similarity_matrix(frozen_visual, frozen_labels)
    y = label_vector(y)
    if y.size != sims.shape[1]:
        raise ValueError(f"label vector has length {y.size}, expected {sims.shape[1]}")
    p = row_softmax(sims, tau)
    out = np.where(y[None, :] == 1, p, p.min())
    return TransportPlan(out, is_teacher=True)


def transform_cost(cost, teacher, lambda2: float) -> np.ndarray:
    """Fold the KL-to-teacher term into the cost: ``C - lambda2 * log(teacher)``."""
    c = as_cost(cost)
    t = np.asarray(getattr(teacher, "entries", teacher), dtype=np.float64)
    if t.shape != c.shape:
        raise ValueError(f"teacher shape {t.shape} does not match cost shape {c.shape}")
    if lambda2 < 0:
        raise ValueError("lambda2 must be >= 0")
    if lambda2 == 0:
        return c
    if np.any(t <= 0):
        raise ValueError("teacher plan must be strictly positive to take its log")
    return as_cost(c - lambda2 * np.log(t))


def entropy(p) -> float:
    """``H(P) = -sum P log P`` with ``0 log 0 = 0``."""
    p = np.asarray(getattr(p, "entries", p), dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def kl_divergence(p, q) -> float:
    """``sum P log(P / Q)`` without mass correction, matching the KCOT objective."""
    p = np.asarray(getattr(p, "entries", p), dtype=np.float64)
    q = np.asarray(getattr(q, "entries", q), dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise ValueError("KL undefined: reference is zero where P is positive")
    return float((p[mask] * np.log(p[mask] / q[mask])).sum())
