"""Per-label scores from region-label similarities.

Five strategies are exposed by name, one per row of the matching ablation:

``average``    mean over regions
``reweight``   per-label softmax over regions (independent re-weighting)
``bipartite``  one region per label via Hungarian assignment on the cost
``ot``         balanced entropic OT on the cost (uniform marginals)
``kcot``       knowledge-constrained OT (label-presence marginal, teacher
               term in train mode)

Every strategy yields a plan whose label columns each carry ``1/N`` mass,
so it can also be scored for planted-pair recovery.
"""

from __future__ import annotations

import numpy as np

from .cost import build_cost
from .solvers import hungarian, sinkhorn, solve_kcot
from .types import SolverConfig, TransportPlan, cosine_similarity_matrix, row_softmax, uniform_marginal

STRATEGIES = ("average", "reweight", "bipartite", "ot", "kcot")


def _sims(sims) -> np.ndarray:
    s = np.asarray(sims, dtype=np.float64)
    if s.ndim != 2 or 0 in s.shape:
        raise ValueError(f"similarities must be a non-empty M x N matrix, got {s.shape}")
    return s


def aggregate_average(sims) -> np.ndarray:
    return _sims(sims).mean(axis=0)


def reweight_weights(sims, tau: float) -> np.ndarray:
    """Column-wise softmax over regions; each column sums to one."""
    return row_softmax(_sims(sims).T, tau).T


def aggregate_reweight(sims, tau: float = 0.01) -> np.ndarray:
    s = _sims(sims)
    return (reweight_weights(s, tau) * s).sum(axis=0)


def aggregate_plan(sims, plan) -> np.ndarray:
    """Plan-weighted similarity per label, ``s_i = sum_k P[k, i] * sims[k, i]``."""
    s = _sims(sims)
    p = np.asarray(getattr(plan, "entries", plan), dtype=np.float64)
    if p.shape != s.shape:
        raise ValueError(f"plan shape {p.shape} does not match similarity shape {s.shape}")
    return (p * s).sum(axis=0)


def minmax_normalize(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full_like(s, 0.5)
    return (s - lo) / (hi - lo)


def final_score(s_local, s_global) -> np.ndarray:
    """Average of the min-max normalized local and global score vectors.

    A constant vector normalizes to 0.5 everywhere.
    """
    s_local = np.asarray(s_local, dtype=np.float64)
    s_global = np.asarray(s_global, dtype=np.float64)
    if s_local.shape != s_global.shape:
        raise ValueError(f"score length mismatch: {s_local.shape} vs {s_global.shape}")
    return 0.5 * (minmax_normalize(s_local) + minmax_normalize(s_global))


def bipartite_plan(cost) -> np.ndarray:
    """Each label sends its ``1/N`` mass to the single region it is assigned.

    Assignment is computed label-side (labels as rows of the Hungarian
    problem) so every label gets a region even when ``M < N``; in that case
    labels beyond the first ``M`` assigned fall back to their cheapest region.
    """
    c = np.asarray(cost, dtype=np.float64)
    M, N = c.shape
    assign, _ = hungarian(c.T)
    plan = np.zeros((M, N))
    for i, k in enumerate(assign):
        if k < 0:
            k = int(np.argmin(c[:, i]))
        plan[k, i] = 1.0 / N
    return plan


def match(strategy: str, visual, labels, cfg: SolverConfig | None = None,
          frozen_visual=None, frozen_labels=None, y=None, kcot_mode: str = "inference"):
    """Run one named strategy; return ``(scores, plan)``.

    ``plan`` is a :class:`TransportPlan` with label columns summing to ``1/N``.
    For the OT-based strategies the scores are the plan-weighted cosine
    similarities; ``average`` and ``reweight`` score directly from the
    similarity matrix.
    """
    cfg = cfg or SolverConfig()
    sims = cosine_similarity_matrix(visual, labels)
    M, N = sims.shape
    if strategy == "average":
        plan = np.full((M, N), 1.0 / (M * N))
        return aggregate_average(sims), TransportPlan(plan)
    if strategy == "reweight":
        plan = reweight_weights(sims, cfg.tau) / N
        return aggregate_reweight(sims, cfg.tau), TransportPlan(plan)
    if strategy == "bipartite":
        plan = bipartite_plan(build_cost(visual, labels, cfg.tau))
        return aggregate_plan(sims, plan), TransportPlan(plan)
    if strategy == "ot":
        C = build_cost(visual, labels, cfg.tau)
        report = sinkhorn(C, uniform_marginal(M), uniform_marginal(N), cfg.lambda1,
                          cfg.max_iter, cfg.tol, cfg.log_domain)
        return aggregate_plan(sims, report.plan), report.plan
    if strategy == "kcot":
        report = solve_kcot(visual, labels, frozen_visual, frozen_labels, y, cfg, mode=kcot_mode)
        return aggregate_plan(sims, report.plan), report.plan
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")
