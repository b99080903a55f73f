import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapedist.errors import DataError, InfeasibleError
from shapedist.qp import (
    QpStatus,
    QuadraticProgram,
    approximation_error,
    build_bias_variance_qp,
    select_coefficients,
    solve_qp,
)


def qp(q, c, g, h):
    return QuadraticProgram(np.atleast_2d(np.asarray(q, float)), np.asarray(c, float),
                            np.asarray(g, float).reshape(-1, len(c)), np.asarray(h, float))


def projected_gradient_oracle(p, iters=200_000):
    """Accelerated projected gradient on the dual (lambda >= 0), for positive definite Q."""
    qinv = np.linalg.inv(p.q_matrix)
    gq = p.g_matrix @ qinv
    hess = gq @ p.g_matrix.T
    lip = np.linalg.eigvalsh(hess).max()
    lam = np.zeros(p.k)
    y, t = lam.copy(), 1.0
    for _ in range(iters):
        z = -qinv @ (p.q_vector + p.g_matrix.T @ y)
        grad = p.g_matrix @ z - p.h_vector
        new = np.maximum(y + grad / lip, 0.0)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        y = new + (t - 1) / t_new * (new - lam)
        if np.max(np.abs(new - lam)) < 1e-15:
            lam = new
            break
        lam, t = new, t_new
    z = -qinv @ (p.q_vector + p.g_matrix.T @ lam)
    return z, p.objective(z)


class TestSolveQp:
    def test_single_bound(self):
        # min 1/2 z^2 s.t. z >= 1
        sol = solve_qp(qp([[1.0]], [0.0], [[-1.0]], [-1.0]))
        assert sol.status == QpStatus.OPTIMAL
        assert sol.z[0] == pytest.approx(1, abs=1e-8)
        assert sol.objective == pytest.approx(0.5, abs=1e-8)

    def test_unconstrained(self):
        sol = solve_qp(qp(np.eye(3), -np.ones(3), np.zeros((0, 3)), np.zeros(0)))
        np.testing.assert_allclose(sol.z, np.ones(3), atol=1e-10)

    def test_projected_gradient_oracle(self):
        g = np.random.default_rng(3)
        b = g.standard_normal((5, 5))
        q = b @ b.T + 0.5 * np.eye(5)
        gm = g.standard_normal((8, 5))
        z0 = g.standard_normal(5)
        p = qp(q, g.standard_normal(5) * 3, gm, gm @ z0 + g.uniform(0.01, 0.5, 8))
        sol = solve_qp(p)
        _, ref = projected_gradient_oracle(p)
        assert sol.status == QpStatus.OPTIMAL
        assert sol.objective == pytest.approx(ref, abs=1e-6)

    def test_matches_cvxpy_when_available(self):
        cp = pytest.importorskip("cvxpy")
        g = np.random.default_rng(8)
        b = g.standard_normal((4, 4))
        q = b @ b.T
        gm = g.standard_normal((10, 4))
        p = qp(q, g.standard_normal(4), gm, np.abs(g.standard_normal(10)))
        z = cp.Variable(4)
        prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(z, cp.psd_wrap(q)) + p.q_vector @ z),
                          [gm @ z <= p.h_vector])
        prob.solve()
        assert solve_qp(p).objective == pytest.approx(prob.value, abs=1e-5)

    def test_infeasible(self):
        # z <= -1 and z >= 1
        sol = solve_qp(qp([[1.0]], [0.0], [[1.0], [-1.0]], [-1.0, -1.0]))
        assert sol.status == QpStatus.INFEASIBLE

    def test_max_iter_status(self):
        g = np.random.default_rng(1)
        gm = g.standard_normal((20, 4))
        sol = solve_qp(qp(np.eye(4), g.standard_normal(4), gm, np.abs(gm).sum(1)), max_iter=1)
        assert sol.status in (QpStatus.MAX_ITER, QpStatus.OPTIMAL)
        assert sol.iterations <= 1

    def test_rejects_asymmetric(self):
        with pytest.raises(DataError):
            qp([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0], np.zeros((0, 2)), np.zeros(0))

    def test_deterministic(self):
        p = build_bias_variance_qp(np.eye(4) * 0.1, 10, 3, grid_size=200)
        a, b = solve_qp(p), solve_qp(p)
        assert np.array_equal(a.z, b.z) and a.iterations == b.iterations


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(0, 12))
def test_optimal_solutions_satisfy_kkt(seed, n, k):
    g = np.random.default_rng(seed)
    b = g.standard_normal((n, n))
    gm = g.standard_normal((k, n))
    p = qp(b @ b.T + 0.1 * np.eye(n), g.standard_normal(n), gm,
           gm @ g.standard_normal(n) + g.uniform(0, 1, k))
    sol = solve_qp(p)
    assert sol.status == QpStatus.OPTIMAL
    assert sol.kkt_residual <= 1e-8
    if k:
        assert np.max(p.g_matrix @ sol.z - p.h_vector) <= 1e-8
    assert abs(sol.duality_gap) <= 1e-7 * (1 + abs(sol.objective))


class TestBiasVarianceProgram:
    def test_minimax_linear_sqrt(self):
        sol = select_coefficients(np.zeros((2, 2)), 1, 1, grid_size=1001)
        np.testing.assert_allclose(sol.gamma, [1 / 8, 1], atol=2e-3)
        assert sol.u == pytest.approx(1 / 8, abs=2e-3)

    def test_minimax_against_dense_search(self):
        # dense grid search over intercepts for slope 1 reproduces the equioscillating fit
        x = np.linspace(0, 1, 20001)
        cands = np.linspace(0, 0.3, 3001)
        errs = [np.max(np.abs(np.sqrt(x) - c - x)) for c in cands]
        assert cands[int(np.argmin(errs))] == pytest.approx(0.125, abs=2e-4)

    def test_zero_cap_infeasible(self):
        p = build_bias_variance_qp(np.zeros((3, 3)), 5, 2, grid_size=100, bias_cap=0.0)
        assert solve_qp(p).status == QpStatus.INFEASIBLE
        with pytest.raises(InfeasibleError, match="larger cap or a larger order"):
            select_coefficients(np.zeros((3, 3)), 5, 2, grid_size=100, bias_cap=0.0)

    def test_large_variance_shrinks_gamma(self):
        sol = select_coefficients(1e6 * np.eye(3), 4, 2, grid_size=500)
        assert sol.u == pytest.approx(1, abs=1e-3)
        assert np.max(np.abs(sol.gamma)) < 1e-3

    def test_layout(self):
        p = build_bias_variance_qp(np.eye(4), 7, 3, grid_size=50, bias_cap=0.5)
        assert p.n == 5 and p.k == 2 * 50 + 2
        assert p.q_matrix[-1, -1] == 2 * 49
        p2 = build_bias_variance_qp(np.eye(4), 7, 3, grid_size=50, intercept=False)
        assert p2.n == 4

    def test_argument_checks(self):
        with pytest.raises(DataError):
            build_bias_variance_qp(np.eye(3), 5, 2, grid_size=3)
        with pytest.raises(DataError):
            build_bias_variance_qp(np.eye(3), 5, 2, bias_cap=-1.0)
        with pytest.raises(DataError):
            build_bias_variance_qp(np.eye(4), 5, 2)

    def test_cap_respected(self):
        a = np.diag([0.0, 1.0, 4.0, 9.0, 16.0, 25.0])
        sol = select_coefficients(a, 30, 5, bias_cap=1.5)
        assert 30 * sol.u <= 1.5 + 1e-8
        assert sol.bias_cap == 1.5

    def test_verification_grid(self):
        a = np.diag([0.0, 0.5, 1.0, 2.0, 3.0, 4.0])
        sol = select_coefficients(a, 10, 5, grid_size=100)
        fine = np.linspace(0, 1, 10 * 99 + 1)
        assert np.max(approximation_error(sol.gamma, fine)) <= sol.u + 1e-6
        assert sol.variance == pytest.approx(sol.gamma @ a @ sol.gamma)

    def test_no_intercept(self):
        sol = select_coefficients(np.zeros((2, 2)), 1, 1, grid_size=1001, intercept=False)
        assert sol.gamma[0] == 0
        # best slope-only fit to sqrt(x) on [0, 1]
        x = np.linspace(0, 1, 10001)
        slopes = np.linspace(0.5, 2, 15001)
        best = min(np.max(np.abs(np.sqrt(x) - s * x)) for s in slopes)
        assert sol.u == pytest.approx(best, abs=1e-3)

    def test_monotone_in_cap(self):
        g = np.random.default_rng(2)
        b = g.standard_normal((6, 6))
        a = b @ b.T * 0.1
        a[0, :] = a[:, 0] = 0
        caps = [None, 3.0, 1.5, 1.2, 1.0, 0.9, 0.86]
        sols = [select_coefficients(a, 30, 5, bias_cap=c) for c in caps]
        var = [s.variance for s in sols]
        obj = [s.objective for s in sols]
        assert all(v2 >= v1 - 1e-8 for v1, v2 in zip(var, var[1:]))
        assert all(o2 >= o1 - 1e-8 for o1, o2 in zip(obj, obj[1:]))

    def test_five_percent_cap_setting(self):
        # a 5% cap on the scaled bias budget
        a = np.diag([0.0, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4])
        sol = select_coefficients(a, 30, 5, bias_cap=0.05 * 30)
        assert 30 * sol.u <= 0.05 * 30 + 1e-8
