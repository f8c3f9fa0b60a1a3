"""Sinkhorn scaling, the end-to-end KCOT solve and exact validation oracles."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .cost import build_cost, entropy, kl_divergence, lpd_marginal, teacher_plan, transform_cost
from .types import SolverConfig, TransportPlan, as_cost, as_marginal, uniform_marginal


class RegularizationUnderflowError(FloatingPointError):
    """exp(-C / lambda) lost a whole row or column to underflow."""


@dataclass(frozen=True)
class SolveReport:
    plan: TransportPlan
    iterations_used: int
    final_marginal_residual: float
    converged: bool
    a: np.ndarray = None
    b: np.ndarray = None
    objective: float = float("nan")
    log_domain: bool = False

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations_used,
            "residual": self.final_marginal_residual,
            "converged": self.converged,
            "objective": self.objective,
        }


def _residual(p, u, v) -> float:
    return float(max(np.abs(p.sum(axis=1) - u).max(), np.abs(p.sum(axis=0) - v).max()))


def sinkhorn(C, u, v, lam: float, max_iter: int = 100, tol: float = 1e-6,
             log_domain: bool = False) -> SolveReport:
    """Entropic OT by alternating diagonal scaling.

    Minimizes ``<P, C> - lam * H(P)`` subject to ``P 1 = u`` and
    ``P^T 1 = v``. Starting from ``b = 1`` each iteration sets
    ``a = u / (K b)`` then ``b = v / (K^T a)`` with ``K = exp(-C / lam)``; the
    loop stops as soon as the max-norm marginal residual is ``<= tol``.

    Parameters
    ----------
    C : array-like (M, N)
        Cost matrix.
    u, v : array-like (M,), (N,)
        Source and target marginals (probability vectors).
    lam : float
        Entropy weight, > 0.
    max_iter : int
        Iteration cap.
    tol : float
        Convergence threshold on the marginal residual.
    log_domain : bool
        Run the same iteration on log-scalings. Needed when ``lam`` is small
        enough for ``K`` to underflow; the standard-domain path raises
        :class:`RegularizationUnderflowError` in that case.

    Returns
    -------
    SolveReport
        ``a`` and ``b`` hold the final scalings (their logs when
        ``log_domain`` is set), so ``plan == diag(a) K diag(b)``.
    """
    C = as_cost(C)
    M, N = C.shape
    u = as_marginal(u, M)
    v = as_marginal(v, N)
    if not lam > 0:
        raise ValueError("regularization must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if log_domain:
        return _sinkhorn_log(C, u, v, lam, max_iter, tol)

    K = np.exp(-C / lam)
    if np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0):
        raise RegularizationUnderflowError(
            f"exp(-C/{lam}) underflows to an all-zero row or column; use log_domain=True")
    b = np.ones(N)
    p = None
    it = 0
    res = np.inf
    with np.errstate(divide="raise", invalid="raise", over="raise"):
        try:
            for it in range(1, max_iter + 1):
                a = u / (K @ b)
                b = v / (K.T @ a)
                p = a[:, None] * K * b[None, :]
                res = _residual(p, u, v)
                if res <= tol:
                    break
        except FloatingPointError as exc:
            raise RegularizationUnderflowError(
                f"scaling vectors degenerated at iteration {it} ({exc}); use log_domain=True") from None
    plan = TransportPlan(p, row_marginal=u, col_marginal=v, residual=res)
    obj = float((p * C).sum() - lam * entropy(p))
    return SolveReport(plan, it, res, res <= tol, a=a, b=b, objective=obj)


def _sinkhorn_log(C, u, v, lam, max_iter, tol) -> SolveReport:
    logK = -C / lam
    log_u = np.log(u, where=u > 0, out=np.full_like(u, -np.inf))
    log_v = np.log(v, where=v > 0, out=np.full_like(v, -np.inf))
    log_b = np.zeros(C.shape[1])
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        log_a = log_u - logsumexp(logK + log_b[None, :], axis=1)
        log_b = log_v - logsumexp(logK + log_a[:, None], axis=0)
        p = np.exp(log_a[:, None] + logK + log_b[None, :])
        res = _residual(p, u, v)
        if res <= tol:
            break
    plan = TransportPlan(p, row_marginal=u, col_marginal=v, residual=res)
    obj = float((p * C).sum() - lam * entropy(p))
    return SolveReport(plan, it, res, res <= tol, a=log_a, b=log_b, objective=obj,
                       log_domain=True)


def sinkhorn_batch(problems, lam: float, max_iter: int = 100, tol: float = 1e-6,
                   log_domain: bool = False, workers: int | None = None) -> list[SolveReport]:
    """Solve independent ``(C, u, v)`` problems, optionally on a thread pool.

    Results come back in input order and are identical to sequential calls.
    ``workers`` defaults to ``$KCOT_THREADS`` (or 1).
    """
    workers = workers or int(os.environ.get("KCOT_THREADS", "1") or 1)

    def run(prob):
        C, u, v = prob
        return sinkhorn(C, u, v, lam, max_iter=max_iter, tol=tol, log_domain=log_domain)

    if workers <= 1:
        return [run(p) for p in problems]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, problems))


def solve_kcot(visual, labels, frozen_visual=None, frozen_labels=None, y=None,
               cfg: SolverConfig | None = None, mode: str = "train") -> SolveReport:
    """Knowledge-constrained OT between regions and labels.

    ``mode="train"`` adds the teacher term: the cost is transformed with the
    masked frozen-feature plan and solved at entropy weight
    ``lambda1 + lambda2``. ``mode="inference"`` keeps only the label-presence
    marginal and solves the plain cost at ``lambda1``. Both use a uniform
    label marginal.
    """
    cfg = cfg or SolverConfig()
    C = build_cost(visual, labels, cfg.tau)
    u = lpd_marginal(visual, labels, cfg.tau)
    v = uniform_marginal(C.shape[1])
    if mode == "inference":
        lam = cfg.lambda1
        report = sinkhorn(C, u, v, lam, cfg.max_iter, cfg.tol, cfg.log_domain)
        return report
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}; expected 'train' or 'inference'")
    if y is None:
        raise ValueError("train mode requires the label vector y")
    if frozen_visual is None or frozen_labels is None:
        raise ValueError("train mode requires frozen visual and label features")
    teacher = teacher_plan(frozen_visual, frozen_labels, y, cfg.tau)
    C_tilde = transform_cost(C, teacher, cfg.lambda2)
    report = sinkhorn(C_tilde, u, v, cfg.lambda_tilde, cfg.max_iter, cfg.tol, cfg.log_domain)
    p = report.plan.entries
    if np.all(p > 0):
        obj = kcot_objective(p, C, teacher, cfg.lambda1, cfg.lambda2)
        report = SolveReport(report.plan, report.iterations_used, report.final_marginal_residual,
                             report.converged, report.a, report.b, obj, report.log_domain)
    return report


def kcot_objective(P, C, teacher, lambda1: float, lambda2: float) -> float:
    """``<P, C> - lambda1 H(P) + lambda2 KL(P || teacher)``.

    Zero weights skip their term, so ``P`` may contain zeros when
    ``lambda1 == lambda2 == 0``.
    """
    P = np.asarray(getattr(P, "entries", P), dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if P.shape != C.shape:
        raise ValueError(f"plan shape {P.shape} does not match cost shape {C.shape}")
    if np.any(P < 0):
        raise ValueError("plan has negative entries")
    total = float((P * C).sum())
    if lambda1 or lambda2:
        if np.any(P <= 0):
            raise ValueError("entropy/KL terms need a strictly positive plan")
    if lambda1:
        total -= lambda1 * entropy(P)
    if lambda2:
        total += lambda2 * kl_divergence(P, teacher)
    return total


# --- exact oracles -----------------------------------------------------------

def _discretize(w: np.ndarray, denominator: int) -> np.ndarray:
    counts = np.rint(w * denominator).astype(np.int64)
    counts[int(np.argmax(w))] += denominator - int(counts.sum())
    if np.any(counts < 0):
        raise ValueError("marginal cannot be rounded to the requested denominator")
    return counts


def exact_ot_oracle(C, u, v, denominator: int = 10_000):
    """Unregularized OT by min-cost flow with successive shortest paths.

    Marginals are rounded to integer multiples of ``1 / denominator`` (the
    rounding residual goes to the largest entry), a bipartite
    source -> rows -> columns -> sink network is built with those integer
    capacities, and flow is pushed along Bellman-Ford shortest paths in the
    residual graph until the demand is met. Intermediate flows stay
    min-cost, so the final flow is an optimal transport plan for the rounded
    marginals.

    Returns
    -------
    plan : ndarray (M, N)
        Optimal flow divided by ``denominator``.
    objective : float
        ``<plan, C>``.
    """
    C = as_cost(C)
    M, N = C.shape
    u = as_marginal(u, M)
    v = as_marginal(v, N)
    denominator = int(denominator)
    if denominator < 1 or denominator > 2**52:
        raise OverflowError(f"denominator {denominator} outside [1, 2**52]")
    supply = _discretize(u, denominator)
    demand = _discretize(v, denominator)
    flow = _min_cost_flow(C, supply, demand)
    plan = flow / denominator
    return plan, float((plan * C).sum())


def _min_cost_flow(C, supply, demand) -> np.ndarray:
    M, N = C.shape
    n_nodes = M + N + 2
    src, snk = M + N, M + N + 1
    # edge arrays; edge e and e ^ 1 are a forward/reverse pair
    head, cap, cost = [], [], []
    adj = [[] for _ in range(n_nodes)]

    def add_edge(a, b, c, w):
        adj[a].append(len(head)); head.append(b); cap.append(c); cost.append(w)
        adj[b].append(len(head)); head.append(a); cap.append(0); cost.append(-w)

    total = int(supply.sum())
    for k in range(M):
        add_edge(src, k, int(supply[k]), 0.0)
    for k in range(M):
        for i in range(N):
            add_edge(k, M + i, total, float(C[k, i]))
    for i in range(N):
        add_edge(M + i, snk, int(demand[i]), 0.0)

    sent = 0
    while sent < total:
        dist = [np.inf] * n_nodes
        prev = [-1] * n_nodes
        dist[src] = 0.0
        # Bellman-Ford with a FIFO queue; residual costs may be negative
        queue, in_queue = [src], [False] * n_nodes
        in_queue[src] = True
        while queue:
            x = queue.pop(0)
            in_queue[x] = False
            for e in adj[x]:
                if cap[e] > 0:
                    nd = dist[x] + cost[e]
                    y = head[e]
                    if nd < dist[y] - 1e-15:
                        dist[y] = nd
                        prev[y] = e
                        if not in_queue[y]:
                            queue.append(y)
                            in_queue[y] = True
        if dist[snk] == np.inf:
            raise ValueError("infeasible transport problem")
        push = total - sent
        y = snk
        while y != src:
            e = prev[y]
            push = min(push, cap[e])
            y = head[e ^ 1]
        y = snk
        while y != src:
            e = prev[y]
            cap[e] -= push
            cap[e ^ 1] += push
            y = head[e ^ 1]
        sent += push

    flow = np.zeros((M, N))
    for k in range(M):
        for e in adj[k]:
            if M <= head[e] < M + N and e % 2 == 0:
                flow[k, head[e] - M] = cap[e ^ 1]
    return flow


def hungarian(C):
    """Minimum-cost assignment (Kuhn-Munkres with row/column potentials).

    Rectangular inputs are padded to square with dummy rows or columns at
    cost ``max(C) + 1``; assignments to dummies are reported as ``-1``.

    Returns
    -------
    assignment : ndarray of int (M,)
        Column assigned to each row, or ``-1`` for rows left unmatched.
    objective : float
        Total cost over the real (non-dummy) pairs.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or 0 in C.shape:
        raise ValueError("hungarian needs a non-empty 2-D cost matrix")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix contains non-finite entries")
    M, N = C.shape
    n = max(M, N)
    sq = np.full((n, n), C.max() + 1.0)
    sq[:M, :N] = C

    INF = np.inf
    pot_u = np.zeros(n + 1)
    pot_v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row (1-based) owning column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = sq[i0 - 1] - pot_u[i0] - pot_v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            pot_u[match[used]] += delta
            pot_v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    assignment = np.full(M, -1, dtype=np.int64)
    for j in range(1, n + 1):
        r, c = match[j] - 1, j - 1
        if r < M and c < N:
            assignment[r] = c
    rows = np.nonzero(assignment >= 0)[0]
    return assignment, float(C[rows, assignment[rows]].sum())
