import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from kcot.cost import build_cost, entropy, lpd_marginal, teacher_plan, transform_cost
from kcot.solvers import (
    RegularizationUnderflowError,
    exact_ot_oracle,
    hungarian,
    kcot_objective,
    sinkhorn,
    sinkhorn_batch,
    solve_kcot,
)
from kcot.types import SolverConfig


def simplex(rng, n):
    w = rng.random(n) + 0.05
    return w / w.sum()


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# --- independent oracles ----------------------------------------------------

def vertex_enumeration_ot(C, supply, demand):
    """Min over all basic feasible solutions of the transportation polytope.

    A basis is a spanning tree of the M + N bipartite graph (M + N - 1 cells);
    its flow is fixed by peeling leaves. Exhaustive, so only for tiny sizes.
    """
    M, N = C.shape
    cells = [(k, i) for k in range(M) for i in range(N)]
    best = math.inf
    for basis in itertools.combinations(cells, M + N - 1):
        remaining = {("r", k): supply[k] for k in range(M)}
        remaining.update({("c", i): demand[i] for i in range(N)})
        edges = {(("r", k), ("c", i)) for k, i in basis}
        degree = {node: 0 for node in remaining}
        for a, b in edges:
            degree[a] += 1
            degree[b] += 1
        flow = {}
        ok = True
        while edges:
            leaf = next((n for n, dgr in degree.items() if dgr == 1), None)
            if leaf is None:
                ok = False  # cycle
                break
            edge = next(e for e in edges if leaf in e)
            other = edge[1] if edge[0] == leaf else edge[0]
            f = remaining[leaf]
            if f < 0:
                ok = False
                break
            flow[edge] = f
            remaining[leaf] = 0
            remaining[other] -= f
            edges.discard(edge)
            degree[leaf] -= 1
            degree[other] -= 1
        if not ok or any(v != 0 for v in remaining.values()):
            continue
        cost = sum(f * C[a[1], b[1]] for (a, b), f in flow.items())
        best = min(best, cost)
    return best


def lp_ot(C, u, v):
    M, N = C.shape
    A = np.vstack([np.kron(np.eye(M), np.ones(N)), np.kron(np.ones(M), np.eye(N))])
    res = linprog(C.ravel(), A_eq=A, b_eq=np.r_[u, v], bounds=(0, None), method="highs")
    return res.fun


def loop_sinkhorn(C, u, v, lam, iters):
    M, N = len(u), len(v)
    K = [[math.exp(-C[k][i] / lam) for i in range(N)] for k in range(M)]
    b = [1.0] * N
    for _ in range(iters):
        a = [u[k] / sum(K[k][i] * b[i] for i in range(N)) for k in range(M)]
        b = [v[i] / sum(K[k][i] * a[k] for k in range(M)) for i in range(N)]
    return np.array([[a[k] * K[k][i] * b[i] for i in range(N)] for k in range(M)])


def loop_cos(x, t):
    return [[sum(p * q for p, q in zip(xk, ti)) /
             (math.sqrt(sum(p * p for p in xk)) * math.sqrt(sum(q * q for q in ti)))
             for ti in t] for xk in x]


def loop_softmax(row, tau):
    m = max(row)
    e = [math.exp((r - m) / tau) for r in row]
    s = sum(e)
    return [x / s for x in e]


# --- sinkhorn -----------------------------------------------------------------

class TestSinkhorn:
    def test_constant_cost_gives_independent_coupling(self):
        rng = np.random.default_rng(0)
        u, v = simplex(rng, 4), simplex(rng, 3)
        r = sinkhorn(np.full((4, 3), 0.7), u, v, 0.1)
        np.testing.assert_allclose(r.plan.entries, np.outer(u, v), atol=1e-15)
        assert r.converged

    def test_singleton(self):
        r = sinkhorn([[0.3]], [1.0], [1.0], 0.05)
        np.testing.assert_allclose(r.plan.entries, [[1.0]])

    def test_two_by_two_closed_form(self):
        # symmetric fixed point: a^2 (1 + e^-10) = 0.5
        r = sinkhorn([[0, 1], [1, 0]], [0.5, 0.5], [0.5, 0.5], 0.1, tol=1e-14)
        diag = 0.5 / (1 + math.exp(-10))
        off = diag * math.exp(-10)
        np.testing.assert_allclose(r.plan.entries, [[diag, off], [off, diag]], rtol=1e-12)
        np.testing.assert_allclose(r.plan.entries, [[0.499977, 0.0000227], [0.0000227, 0.499977]],
                                   atol=5e-7)

    def test_feasibility_and_fixed_point(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            M, N = rng.integers(1, 20, size=2)
            C, u, v = rng.random((M, N)), simplex(rng, M), simplex(rng, N)
            r = sinkhorn(C, u, v, 0.1, max_iter=10_000, tol=1e-6)
            assert r.converged and r.iterations_used <= 10_000
            P = r.plan.entries
            assert np.abs(P.sum(1) - u).max() <= 1e-6
            assert np.abs(P.sum(0) - v).max() <= 1e-6
            rebuilt = np.diag(r.a) @ np.exp(-C / 0.1) @ np.diag(r.b)
            np.testing.assert_allclose(P, rebuilt, rtol=0, atol=1e-12)

    def test_matches_loop_iteration(self):
        rng = np.random.default_rng(2)
        C, u, v = rng.random((3, 4)), simplex(rng, 3), simplex(rng, 4)
        r = sinkhorn(C, u, v, 0.2, max_iter=7, tol=1e-300)
        assert r.iterations_used == 7 and not r.converged
        np.testing.assert_allclose(r.plan.entries, loop_sinkhorn(C.tolist(), u, v, 0.2, 7),
                                   rtol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        C, u, v = rng.random((6, 5)), simplex(rng, 6), simplex(rng, 5)
        a = sinkhorn(C, u, v, 0.05, max_iter=500)
        b = sinkhorn(C, u, v, 0.05, max_iter=500)
        assert a.plan.entries.tobytes() == b.plan.entries.tobytes()

    def test_underflow_error(self):
        with pytest.raises(RegularizationUnderflowError, match="log_domain"):
            sinkhorn([[0.0, 1.0], [10.0, 10.0]], [0.5, 0.5], [0.5, 0.5], 1e-3)

    def test_log_domain_handles_small_regularization(self):
        # every exp(-C / lam) underflows, yet the relative gap is only 5 in log units
        C = 10.0 + np.array([[0.0, 0.005], [0.005, 0.0]])
        with pytest.raises(RegularizationUnderflowError):
            sinkhorn(C, [0.5, 0.5], [0.5, 0.5], 1e-3)
        r = sinkhorn(C, [0.5, 0.5], [0.5, 0.5], 1e-3, max_iter=1000, tol=1e-14, log_domain=True)
        assert r.converged and r.log_domain
        diag = 0.5 / (1 + math.exp(-5))
        np.testing.assert_allclose(r.plan.entries, [[diag, 0.5 - diag], [0.5 - diag, diag]],
                                   rtol=1e-12)

    def test_log_domain_agrees_with_standard(self):
        rng = np.random.default_rng(4)
        C, u, v = rng.random((5, 7)), simplex(rng, 5), simplex(rng, 7)
        a = sinkhorn(C, u, v, 0.05, max_iter=5000, tol=1e-12)
        b = sinkhorn(C, u, v, 0.05, max_iter=5000, tol=1e-12, log_domain=True)
        np.testing.assert_allclose(a.plan.entries, b.plan.entries, atol=1e-12)
        np.testing.assert_allclose(b.plan.entries,
                                   np.exp(b.a[:, None] - C / 0.05 + b.b[None, :]), atol=1e-15)

    def test_lowest_entropic_objective_among_feasible_plans(self):
        rng = np.random.default_rng(5)
        M, N, lam = 5, 4, 0.1
        C, u, v = rng.random((M, N)), simplex(rng, M), simplex(rng, N)
        best = sinkhorn(C, u, v, lam, max_iter=10_000, tol=1e-13)

        def objective(P):
            return (P * C).sum() - lam * entropy(P)

        for _ in range(100):
            # Sinkhorn-projecting a random positive matrix yields a feasible competitor
            K0 = rng.random((M, N)) + 1e-3
            comp = sinkhorn(-lam * np.log(K0), u, v, lam, max_iter=10_000, tol=1e-13).plan.entries
            assert objective(best.plan.entries) <= objective(comp) + 1e-12

    def test_batch_matches_sequential(self):
        rng = np.random.default_rng(6)
        probs = [(rng.random((4, 3)), simplex(rng, 4), simplex(rng, 3)) for _ in range(12)]
        seq = sinkhorn_batch(probs, 0.1, workers=1)
        par = sinkhorn_batch(probs, 0.1, workers=4)
        for a, b in zip(seq, par):
            assert a.plan.entries.tobytes() == b.plan.entries.tobytes()
            assert a.iterations_used == b.iterations_used

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            sinkhorn(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5], 0.0)
        with pytest.raises(ValueError):
            sinkhorn(np.ones((2, 2)), [0.5, 0.6], [0.5, 0.5], 0.1)
        with pytest.raises(ValueError):
            sinkhorn(np.ones((2, 2)), [0.5, 0.5], [1.0], 0.1)


# --- exact oracle -------------------------------------------------------------

class TestExactOT:
    def test_zero_cost_diagonal(self):
        u = np.full(3, 1 / 3)
        plan, obj = exact_ot_oracle(1 - np.eye(3), u, u, denominator=3)
        np.testing.assert_allclose(plan, np.eye(3) / 3)
        assert obj == 0.0

    def test_single_source(self):
        C = np.array([[0.4, 0.1, 0.9]])
        v = np.array([0.2, 0.5, 0.3])
        plan, obj = exact_ot_oracle(C, [1.0], v)
        np.testing.assert_allclose(plan, [v])
        assert obj == pytest.approx((C * v).sum())

    def test_single_target_takes_everything_at_cheapest_labels(self):
        C = np.array([[0.4], [0.1]])
        plan, obj = exact_ot_oracle(C, [0.3, 0.7], [1.0])
        np.testing.assert_allclose(plan, [[0.3], [0.7]])

    def test_vertex_enumeration_5x4(self):
        rng = np.random.default_rng(7)
        C = rng.random((5, 4))
        u, v = simplex(rng, 5), simplex(rng, 4)
        D = 60
        plan, obj = exact_ot_oracle(C, u, v, denominator=D)
        supply = np.rint(u * D).astype(int)
        supply[np.argmax(u)] += D - supply.sum()
        demand = np.rint(v * D).astype(int)
        demand[np.argmax(v)] += D - demand.sum()
        np.testing.assert_array_equal(np.rint(plan.sum(1) * D), supply)
        np.testing.assert_array_equal(np.rint(plan.sum(0) * D), demand)
        assert obj * D == pytest.approx(vertex_enumeration_ot(C, supply, demand), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_linear_program(self, seed):
        rng = np.random.default_rng(seed)
        M, N = rng.integers(2, 9, size=2)
        C = rng.random((M, N))
        u, v = np.full(M, 1 / M), np.full(N, 1 / N)
        D = M * N * 10
        _, obj = exact_ot_oracle(C, u, v, denominator=D)
        assert obj == pytest.approx(lp_ot(C, u, v), abs=1e-12)

    def test_lower_bound_for_feasible_plans(self):
        rng = np.random.default_rng(8)
        C = rng.random((4, 6))
        u, v = np.full(4, 0.25), np.full(6, 1 / 6)
        _, obj = exact_ot_oracle(C, u, v, denominator=120)
        for _ in range(20):
            P = sinkhorn(rng.random((4, 6)), u, v, 0.3, max_iter=5000, tol=1e-14).plan.entries
            assert obj <= (P * C).sum() + 1e-12

    def test_denominator_overflow(self):
        with pytest.raises(OverflowError):
            exact_ot_oracle(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5], denominator=2**60)


# --- hungarian ----------------------------------------------------------------

def brute_force_assignment(C):
    n = C.shape[0]
    perms = np.array(list(itertools.permutations(range(n))))
    totals = C[np.arange(n), perms].sum(axis=1)
    return totals.min()


class TestHungarian:
    def test_diagonal(self):
        assign, cost = hungarian(1 - np.eye(4))
        np.testing.assert_array_equal(assign, np.arange(4))
        assert cost == 0

    def test_two_by_two(self):
        assign, cost = hungarian([[0, 1], [1, 0]])
        np.testing.assert_array_equal(assign, [0, 1])
        assert cost == 0

    @pytest.mark.parametrize("n", range(1, 8))
    def test_brute_force(self, n):
        rng = np.random.default_rng(n)
        for _ in range(5):
            C = rng.random((n, n))
            assign, cost = hungarian(C)
            assert sorted(assign) == list(range(n))
            assert cost == pytest.approx(C[np.arange(n), assign].sum(), abs=1e-12)
            assert cost == pytest.approx(brute_force_assignment(C), abs=1e-12)

    def test_rectangular_padding(self):
        rng = np.random.default_rng(9)
        C = rng.random((3, 5))
        assign, cost = hungarian(C)
        best = min(sum(C[k, p[k]] for k in range(3)) for p in itertools.permutations(range(5), 3))
        assert cost == pytest.approx(best)
        assign, cost = hungarian(C.T)
        assert (assign >= 0).sum() == 3 and (assign == -1).sum() == 2
        assert cost == pytest.approx(best)

    def test_empty(self):
        with pytest.raises(ValueError):
            hungarian(np.zeros((0, 0)))


# --- objective and end-to-end ------------------------------------------------

class TestKcotObjective:
    def test_plain_transport_cost(self):
        P = np.array([[0.5, 0.0], [0.0, 0.5]])
        C = np.array([[0.1, 0.9], [0.8, 0.3]])
        assert kcot_objective(P, C, None, 0.0, 0.0) == pytest.approx(0.2)

    def test_kl_to_itself_vanishes(self):
        rng = np.random.default_rng(0)
        P = rng.random((3, 3))
        P /= P.sum()
        C = rng.random((3, 3))
        assert kcot_objective(P, C, P, 0.0, 0.7) == pytest.approx((P * C).sum(), abs=1e-15)

    def test_transformed_form(self):
        rng = np.random.default_rng(1)
        P = rng.random((4, 5)) + 0.01
        P /= P.sum()
        C, T = rng.random((4, 5)), rng.random((4, 5)) + 1e-3
        lhs = kcot_objective(P, C, T, 0.1, 0.05)
        rhs = (P * transform_cost(C, T, 0.05)).sum() - 0.15 * entropy(P)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_needs_positive_plan(self):
        with pytest.raises(ValueError):
            kcot_objective([[0.0, 1.0]], [[1.0, 1.0]], [[0.5, 0.5]], 0.1, 0.0)


class TestSolveKcot:
    def setup_method(self):
        rng = np.random.default_rng(42)
        self.x, self.t = unit_rows(rng, 4, 6), unit_rows(rng, 3, 6)
        self.fx, self.ft = unit_rows(rng, 4, 6), unit_rows(rng, 3, 6)
        self.y = np.array([1.0, 0.0, 1.0])

    def test_zero_knowledge_weight_equals_inference(self):
        cfg = SolverConfig(lambda2=0.0, tau=0.1, max_iter=2000, tol=1e-12)
        a = solve_kcot(self.x, self.t, self.fx, self.ft, self.y, cfg, mode="train")
        b = solve_kcot(self.x, self.t, cfg=cfg, mode="inference")
        np.testing.assert_allclose(a.plan.entries, b.plan.entries, atol=1e-9)

    def test_label_permutation_equivariance(self):
        cfg = SolverConfig(tau=0.1, max_iter=2000, tol=1e-12)
        perm = [2, 0, 1]
        a = solve_kcot(self.x, self.t, self.fx, self.ft, self.y, cfg)
        b = solve_kcot(self.x, self.t[perm], self.fx, self.ft[perm], self.y[perm], cfg)
        np.testing.assert_allclose(b.plan.entries, a.plan.entries[:, perm], atol=1e-12)

    def test_stage_by_stage_pipeline(self):
        cfg = SolverConfig(max_iter=100)
        tau, l1, l2 = cfg.tau, cfg.lambda1, cfg.lambda2
        sims = loop_cos(self.x.tolist(), self.t.tolist())
        C = [[1 - p for p in loop_softmax(row, tau)] for row in sims]
        np.testing.assert_allclose(build_cost(self.x, self.t, tau), C, atol=1e-14)
        u = loop_softmax([max(row) for row in sims], tau)
        np.testing.assert_allclose(lpd_marginal(self.x, self.t, tau), u, atol=1e-14)
        Pp = [loop_softmax(row, tau) for row in loop_cos(self.fx.tolist(), self.ft.tolist())]
        lo = min(min(r) for r in Pp)
        Pt = [[Pp[k][i] if self.y[i] else lo for i in range(3)] for k in range(4)]
        np.testing.assert_allclose(teacher_plan(self.fx, self.ft, self.y, tau).entries, Pt,
                                   rtol=1e-12)
        Ct = [[C[k][i] - l2 * math.log(Pt[k][i]) for i in range(3)] for k in range(4)]
        expected = loop_sinkhorn(Ct, u, [1 / 3] * 3, l1 + l2, 5000)

        r = solve_kcot(self.x, self.t, self.fx, self.ft, self.y,
                       SolverConfig(max_iter=5000, tol=1e-15))
        np.testing.assert_allclose(r.plan.entries, expected, atol=1e-12)
        default = solve_kcot(self.x, self.t, self.fx, self.ft, self.y, cfg)
        assert default.converged
        np.testing.assert_allclose(default.plan.entries, expected, atol=1e-6)

    def test_inference_ignores_teacher(self):
        cfg = SolverConfig(tau=0.1)
        a = solve_kcot(self.x, self.t, cfg=cfg, mode="inference")
        b = solve_kcot(self.x, self.t, self.fx, self.ft, self.y, cfg, mode="inference")
        assert a.plan.entries.tobytes() == b.plan.entries.tobytes()

    def test_missing_labels_in_train(self):
        with pytest.raises(ValueError, match="y"):
            solve_kcot(self.x, self.t, self.fx, self.ft, None, SolverConfig())

    def test_uniform_marginal_reduces_to_plain_eot(self):
        # identical regions -> uniform LPD marginal; lambda2 = 0 -> plain entropic OT
        rng = np.random.default_rng(3)
        x = np.tile(unit_rows(rng, 1, 5), (4, 1))
        t = unit_rows(rng, 3, 5)
        cfg = SolverConfig(lambda2=0.0, tau=0.1, max_iter=2000, tol=1e-13)
        r = solve_kcot(x, t, x, t, np.ones(3), cfg)
        C = build_cost(x, t, 0.1)
        plain = sinkhorn(C, np.full(4, 0.25), np.full(3, 1 / 3), 0.1, 2000, 1e-13)
        np.testing.assert_allclose(r.plan.entries, plain.plan.entries, atol=1e-12)
