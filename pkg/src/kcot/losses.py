"""Multi-label training losses over a batch of logits ``S`` (B x N) and labels ``Y``.

The contrastive (MMC) losses return ``(loss, grad)`` with the exact gradient
with respect to ``S``. ASL and ranking are forward-only baselines.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp


def _batch(S, Y):
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if S.shape != Y.shape:
        raise ValueError(f"logits {S.shape} and labels {Y.shape} differ in shape")
    if not np.all(np.isfinite(S)):
        raise ValueError("logits contain non-finite entries")
    if not np.all((Y == 0) | (Y == 1)):
        raise ValueError("labels must be binary")
    return S, Y


def _check_contrastive(Y, tau_prime):
    if not tau_prime > 0:
        raise ValueError("tau_prime must be > 0")
    n_pos = Y.sum()
    if n_pos < 1:
        raise ValueError("MMC loss needs at least one positive pair")
    return n_pos


def mmc_loss(S, Y, tau_prime: float = 0.07):
    """Multi-matching contrastive loss with batch-wide negatives.

    Every positive ``(b, i)`` is contrasted against all ``B * N`` logits of the
    batch, and the negative log-likelihoods are averaged over the positives.
    The gradient is ``(softmax(S / tau') - Y / |P|) / tau'``.
    """
    S, Y = _batch(S, Y)
    n_pos = _check_contrastive(Y, tau_prime)
    z = S / tau_prime
    log_z = logsumexp(z)
    loss = -((z - log_z) * Y).sum() / n_pos
    grad = (np.exp(z - log_z) - Y / n_pos) / tau_prime
    return float(loss), grad


def mmc_loss_no_batch(S, Y, tau_prime: float = 0.07):
    """Same as :func:`mmc_loss` but each positive only competes within its own sample."""
    S, Y = _batch(S, Y)
    n_pos = _check_contrastive(Y, tau_prime)
    z = S / tau_prime
    log_z = logsumexp(z, axis=1, keepdims=True)
    loss = -((z - log_z) * Y).sum() / n_pos
    per_sample = Y.sum(axis=1, keepdims=True)
    grad = (per_sample * np.exp(z - log_z) - Y) / (n_pos * tau_prime)
    return float(loss), grad


def asl_loss(S, Y, gamma_pos: float = 0.0, gamma_neg: float = 4.0) -> float:
    """Asymmetric focal loss on probabilities ``S`` in (0, 1).

    Signed so that lower is better:
    ``-mean(y (1-s)^g+ log s + (1-y) s^g- log(1-s))``.
    """
    S, Y = _batch(S, Y)
    if np.any(S <= 0) or np.any(S >= 1):
        raise ValueError("ASL expects probabilities strictly inside (0, 1)")
    pos = (1 - S) ** gamma_pos * np.log(S)
    neg = S ** gamma_neg * np.log1p(-S)
    return float(-np.where(Y == 1, pos, neg).mean())


def ranking_loss(S, Y, margin: float = 1.0) -> float:
    """Pairwise hinge ``max(margin + s_neg - s_pos, 0)`` summed over samples and pairs."""
    S, Y = _batch(S, Y)
    total = 0.0
    for s, y in zip(S, Y):
        pos = s[y == 1]
        neg = s[y == 0]
        if pos.size and neg.size:
            # difference first, so a tie contributes exactly ``margin``
            total += np.maximum(margin - (pos[:, None] - neg[None, :]), 0.0).sum()
    return float(total)


def training_objective(S_local, S_global, Y, tau_prime: float = 0.07):
    """Sum of the MMC losses of the local (plan-aggregated) and global streams.

    Returns ``(loss, grad_local, grad_global)``.
    """
    loss_r, grad_r = mmc_loss(S_local, Y, tau_prime)
    loss_g, grad_g = mmc_loss(S_global, Y, tau_prime)
    return loss_r + loss_g, grad_r, grad_g
