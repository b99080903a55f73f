import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapedist.errors import DataError, InsufficientSamplesError
from shapedist.linalg import random_orthogonal
from shapedist.moments import (
    EigenmomentVector,
    GramPair,
    bootstrap_moment_covariance,
    confidence_interval,
    critical_value,
    eigenmoment,
    eigenmoments,
    elementary_symmetric,
    estimate_moments,
    gram_pair,
    moment_cosine_similarity,
    moment_nuclear_norm,
    rescale_factor,
    scale_moments,
)
from shapedist.plugin import CovarianceSet, covariance_set
from shapedist.qp import CoefficientSolution, select_coefficients
from shapedist.synthetic import make_ground_truth, sample_responses


def brute_force_moment(p, x, y):
    """Nested loops over every ordered tuple of 2p distinct stimuli."""
    m = len(x)
    total, count = 0.0, 0
    for tup in itertools.product(range(m), repeat=2 * p):
        if len(set(tup)) < 2 * p:
            continue
        a, b = tup[0::2], tup[1::2]
        prod = 1.0
        for s in range(p):
            prod *= float(np.dot(y[a[s]], y[b[s]]))
            prod *= float(np.dot(x[b[s]], x[a[(s + 1) % p]]))
        total += prod
        count += 1
    return total / count


def coeffs(gamma, u=0.0, variance=0.0, dims=1):
    return CoefficientSolution(np.asarray(gamma, float), u, variance, variance, dims, None, 1000)


class TestGram:
    def test_orthonormal_rows(self):
        g = gram_pair(np.eye(3), np.eye(3))
        np.testing.assert_array_equal(g.gx, np.eye(3))

    def test_single_row(self):
        a = np.array([[1.0, 2.0, 2.0]])
        assert gram_pair(a, a).gx[0, 0] == 9

    def test_loop_oracle(self, rng):
        x, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
        g = gram_pair(x, y)
        for a in range(5):
            for b in range(5):
                assert g.gx[a, b] == pytest.approx(np.dot(x[a], x[b]), abs=1e-14)
                assert g.gy[a, b] == pytest.approx(np.dot(y[a], y[b]), abs=1e-14)

    def test_mismatch(self, rng):
        with pytest.raises(DataError):
            gram_pair(rng.standard_normal((4, 2)), rng.standard_normal((5, 2)))


class TestEigenmoment:
    def test_all_ones(self):
        x = np.array([[1.0], [1.0]])
        g = gram_pair(x, x)
        for strategy in ("exact", "paths"):
            assert eigenmoment(1, g, strategy) == 1

    def test_orthogonal_rows(self):
        g = gram_pair(np.eye(4), np.eye(4))
        assert eigenmoment(1, g, "exact") == 0
        assert eigenmoment(2, g, "paths") == 0

    @pytest.mark.parametrize("p,m", [(1, 6), (2, 6), (1, 8), (2, 8)])
    def test_exact_equals_nested_loops(self, p, m):
        g = np.random.default_rng(100 + 10 * p + m)
        x = g.integers(-3, 4, size=(m, 2)).astype(float)
        y = g.integers(-3, 4, size=(m, 3)).astype(float)
        assert eigenmoment(p, gram_pair(x, y), "exact") == brute_force_moment(p, x, y)

    def test_tuple_count(self):
        assert math.perm(6, 4) == 360

    def test_insufficient_samples(self, rng):
        g = gram_pair(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
        with pytest.raises(InsufficientSamplesError):
            eigenmoment(2, g, "exact")
        with pytest.raises(InsufficientSamplesError):
            eigenmoments(g, 2, 2)

    def test_unknown_strategy(self, rng):
        g = gram_pair(rng.standard_normal((6, 2)), rng.standard_normal((6, 2)))
        with pytest.raises(DataError):
            eigenmoment(1, g, "bogus")

    def test_monte_carlo_full_budget_is_exact(self, rng):
        x, y = rng.standard_normal((7, 2)), rng.standard_normal((7, 3))
        g = gram_pair(x, y)
        for p in (1, 2, 3):
            mc = eigenmoment(p, g, "monte_carlo", n_tuples=math.perm(7, 2 * p), rng=rng)
            assert mc == pytest.approx(eigenmoment(p, g, "exact"), abs=1e-10)

    def test_monte_carlo_converges(self, rng):
        x, y = rng.standard_normal((9, 2)), rng.standard_normal((9, 2))
        g = gram_pair(x, y)
        ex = eigenmoment(1, g, "exact")
        mc = eigenmoment(1, g, "monte_carlo", n_tuples=40_000, rng=rng)
        assert mc == pytest.approx(ex, rel=0.05, abs=0.05)

    def test_paths_is_exact_average_of_increasing_cycles(self, rng):
        m, p = 7, 2
        x, y = rng.standard_normal((m, 2)), rng.standard_normal((m, 2))
        g = gram_pair(x, y)
        vals = []
        for c in itertools.combinations(range(m), 2 * p):
            prod = 1.0
            for s in range(p):
                prod *= g.gy[c[2 * s], c[2 * s + 1]] * g.gx[c[2 * s + 1], c[(2 * s + 2) % (2 * p)]]
            vals.append(prod)
        assert eigenmoment(p, g, "paths") == pytest.approx(np.mean(vals), rel=1e-12)

    def test_paths_order_one_equals_exact(self, rng):
        x, y = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
        g = gram_pair(x, y)
        assert eigenmoment(1, g, "paths") == pytest.approx(eigenmoment(1, g, "exact"), rel=1e-12)

    def test_elementary_symmetric(self):
        w = np.array([1.0, 2.0, 3.0])
        assert elementary_symmetric(w, 2) == 11
        assert elementary_symmetric(np.ones(8), 4) == math.comb(8, 4)

    def test_paths_weights_reproduce_resample(self, rng):
        # integer weights equal a resample in which tuples reusing a row are dropped
        m, p = 6, 1
        x, y = rng.standard_normal((m, 2)), rng.standard_normal((m, 2))
        g = gram_pair(x, y)
        w = np.array([2, 0, 1, 3, 0, 1])
        idx = np.repeat(np.arange(m), w)
        vals = [g.gy[idx[a], idx[b]] * g.gx[idx[b], idx[a]]
                for a in range(len(idx)) for b in range(a + 1, len(idx)) if idx[a] != idx[b]]
        got = eigenmoments(g, p, 2, weights=w)[1]
        assert got == pytest.approx(np.mean(vals), rel=1e-12)

    @pytest.mark.parametrize("strategy", ["exact", "paths"])
    def test_unbiased(self, strategy):
        g = np.random.default_rng(42)
        n, m, trials = 3, 8, 2000
        model = make_ground_truth(n, 0.6, spectrum_shape="linear_decay", rng=g)
        s = np.linalg.svd(model.sigma_ij, compute_uv=False)
        for p in (1, 2):
            vals = np.empty(trials)
            for t in range(trials):
                x, _, y, _ = sample_responses(model, m, rng=g)
                vals[t] = eigenmoment(p, gram_pair(x, y), strategy)
            se = vals.std(ddof=1) / np.sqrt(trials)
            assert abs(vals.mean() - np.sum(s ** (2 * p))) < 4 * se

    def test_rotation_invariance_exact(self, rng):
        x = rng.integers(-4, 5, size=(8, 3)).astype(float)
        y = rng.integers(-4, 5, size=(8, 3)).astype(float)
        perm = np.eye(3)[[2, 0, 1]] * np.array([1.0, -1.0, 1.0])
        a = eigenmoments(gram_pair(x, y), 3, 3)
        b = eigenmoments(gram_pair(x @ perm, y @ perm.T), 3, 3)  # signed permutations
        np.testing.assert_array_equal(a, b)
        q = random_orthogonal(3, rng)
        np.testing.assert_allclose(eigenmoments(gram_pair(x @ q, y), 3, 3), a, rtol=1e-10)

    def test_scale_equivariance(self, rng):
        x, y = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
        a = eigenmoments(gram_pair(x, y), 3, 3)
        b = eigenmoments(gram_pair(2 * x, y), 3, 3)
        np.testing.assert_array_equal(b[1:], a[1:] * 4.0 ** np.arange(1, 4))


class TestRescale:
    def test_top_singular_value(self):
        cov = CovarianceSet(np.eye(2), np.eye(2), np.diag([2.0, 1.0]))
        assert rescale_factor(cov) == pytest.approx(6)

    def test_fallback(self):
        n = 4
        cov = CovarianceSet(np.eye(n), np.eye(n), np.zeros((n, n)))
        assert rescale_factor(cov) == pytest.approx(1.5)

    def test_all_zero(self):
        with pytest.raises(DataError):
            rescale_factor(CovarianceSet(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))))

    def test_margin_check(self):
        with pytest.raises(DataError):
            rescale_factor(CovarianceSet(np.eye(2), np.eye(2), np.eye(2)), margin=0.5)

    def test_plugin_eigenvalues_in_range(self, rng):
        x, y = rng.standard_normal((50, 6)), rng.standard_normal((50, 6))
        cov = covariance_set(x, y)
        k = rescale_factor(cov)
        lam = np.linalg.svd(cov.sigma_ij, compute_uv=False) ** 2
        assert np.all(lam / k >= 0) and np.all(lam / k <= 1 / 1.5 + 1e-12)


class TestBootstrap:
    def test_identical_rows(self):
        x = np.tile([[1.0, 2.0]], (10, 1))
        y = np.tile([[0.5, -1.0, 1.0]], (10, 1))
        a = bootstrap_moment_covariance(x, y, 2, 1.0, 50, np.random.default_rng(0))
        assert np.max(np.abs(a.a)) < 1e-20

    def test_shape_and_zero_row(self, rng):
        x, y = rng.standard_normal((20, 3)), rng.standard_normal((20, 3))
        a = bootstrap_moment_covariance(x, y, 3, 1.0, 30, rng)
        assert a.a.shape == (4, 4) and a.n_boot == 30 and a.scaled
        assert np.all(a.a[0] == 0) and np.all(a.a[:, 0] == 0)
        assert np.all(np.diag(a.a) >= 0)
        np.testing.assert_array_equal(a.a, a.a.T)

    def test_thread_count_does_not_matter(self, rng):
        x, y = rng.standard_normal((25, 3)), rng.standard_normal((25, 3))
        a = bootstrap_moment_covariance(x, y, 3, 2.0, 40, np.random.default_rng(7), workers=1)
        b = bootstrap_moment_covariance(x, y, 3, 2.0, 40, np.random.default_rng(7), workers=4)
        np.testing.assert_array_equal(a.a, b.a)

    def test_monte_carlo_strategy_runs(self, rng):
        x, y = rng.standard_normal((12, 2)), rng.standard_normal((12, 2))
        a = bootstrap_moment_covariance(x, y, 2, 1.0, 10, rng, strategy="monte_carlo", n_tuples=500)
        assert np.all(np.isfinite(a.a))

    def test_variance_matches_fresh_data(self):
        g = np.random.default_rng(3)
        # moderate similarity; near zero similarity the bootstrap is conservative (larger)
        n, m = 5, 200
        model = make_ground_truth(n, 0.5, rng=g)
        fresh = []
        for _ in range(500):
            x, _, y, _ = sample_responses(model, m, rng=g)
            fresh.append(eigenmoments(gram_pair(x, y), 1, n)[1])
        x, _, y, _ = sample_responses(model, m, rng=g)
        boot = bootstrap_moment_covariance(x, y, 1, 1.0, 500, g)
        ratio = boot.a[1, 1] / np.var(fresh, ddof=1)
        assert 0.5 <= ratio <= 2.0

    def test_argument_checks(self, rng):
        x = rng.standard_normal((10, 2))
        with pytest.raises(DataError):
            bootstrap_moment_covariance(x, x, 2, 1.0, 1, rng)
        with pytest.raises(DataError):
            bootstrap_moment_covariance(x, x, 2, 1.0, 10, None)


class TestPointEstimate:
    def test_passthrough(self):
        mom = EigenmomentVector(np.array([3.0, 0.7, 0.2]), 2, 1.0)
        assert moment_nuclear_norm(mom, coeffs([0, 1, 0])) == 0.7

    def test_identity_spectrum(self):
        n = 4
        mom = EigenmomentVector(np.full(4, float(n)), 3, 1.0)
        g = np.array([0.1, 0.5, -0.2, 0.05])
        assert moment_nuclear_norm(mom, coeffs(g)) == pytest.approx(g.sum() * n)

    def test_known_spectrum_minimax_fit(self):
        lam = np.array([0.9, 0.4, 0.1])
        mom = EigenmomentVector(np.array([3.0, lam.sum()]), 1, 1.0)
        est = moment_nuclear_norm(mom, coeffs([1 / 8, 1], u=1 / 8, dims=3))
        assert est == pytest.approx(1.775)
        assert abs(est - np.sqrt(lam).sum()) <= 3 / 8

    def test_rescaled(self):
        # sqrt(kappa) * sum gamma_p W_p / kappa^p
        raw = np.array([2.0, 8.0, 40.0])
        mom = EigenmomentVector(scale_moments(raw, 4.0), 2, 4.0)
        g = np.array([0.1, 0.9, -0.1])
        assert moment_nuclear_norm(mom, coeffs(g)) == pytest.approx(2 * (0.2 + 0.9 * 2 - 0.1 * 2.5))

    def test_contract_checks(self):
        with pytest.raises(DataError):
            moment_nuclear_norm(EigenmomentVector(np.ones(2), 1, 1.0, scaled=False), coeffs([0, 1]))
        with pytest.raises(DataError):
            moment_nuclear_norm(EigenmomentVector(np.ones(3), 2, 1.0), coeffs([0, 1]))

    def test_cosine(self):
        assert moment_cosine_similarity(2.5, 2.5).value == 1
        assert moment_cosine_similarity(0.0, 2.5).value == 0
        assert moment_cosine_similarity(-0.5, 2.5).value == -0.2
        with pytest.raises(DataError):
            moment_cosine_similarity(1.0, 0.0)


class TestInterval:
    def test_degenerate(self):
        assert confidence_interval(1.3, coeffs([0, 1]), 5, 2.0) == (1.3, 1.3)

    def test_critical_value(self):
        assert critical_value(0.05) == pytest.approx(1.959964, abs=1e-5)
        with pytest.raises(DataError):
            critical_value(1.0)

    def test_half_width(self):
        c = coeffs([0.1, 1], u=0.02, variance=0.09)
        lo, hi = confidence_interval(1.0, c, 10, 4.0, 0.05)
        half = 2 * (critical_value(0.05) * 0.3 + 10 * 0.02)
        assert (lo, hi) == pytest.approx((1 - half, 1 + half))
        lo2, hi2 = confidence_interval(1.0, c, 10, 4.0, 0.05, denom=4.0)
        assert (lo2, hi2) == pytest.approx((lo / 4, hi / 4))


class TestEstimateMoments:
    def test_cap_contract_and_report(self, rng):
        x, y = rng.standard_normal((100, 10)), rng.standard_normal((100, 10))
        res = estimate_moments(x, y, bias_cap=0.05, n_boot=100, rng=np.random.default_rng(1))
        assert res.cosine.bias_bound <= 0.05 + 1e-8
        assert res.cosine.ci_low <= res.cosine.value <= res.cosine.ci_high
        assert res.nuclear.ci_low <= res.nuclear.value <= res.nuclear.ci_high
        assert res.provenance["order"] == 5 and res.provenance["grid_size"] == 1000
        assert res.provenance["margin"] == 1.5 and not res.provenance["split_trial"]

    def test_deterministic(self, rng):
        x, y = rng.standard_normal((40, 4)), rng.standard_normal((40, 4))
        a = estimate_moments(x, y, n_boot=40, rng=np.random.default_rng(5))
        b = estimate_moments(x, y, n_boot=40, rng=np.random.default_rng(5), workers=3)
        assert a.nuclear == b.nuclear and a.cosine == b.cosine

    def test_split_trial_denominator(self, rng):
        x, y = rng.standard_normal((60, 4)), rng.standard_normal((60, 4))
        xr, yr = x + 0.1 * rng.standard_normal(x.shape), y + 0.1 * rng.standard_normal(y.shape)
        res = estimate_moments(x, y, x_rep=xr, y_rep=yr, n_boot=30, rng=rng)
        cov = covariance_set(x, y, xr, yr)
        assert res.denom == pytest.approx(np.sqrt(cov.trace_ii * cov.trace_jj))
        assert res.provenance["split_trial"]

    def test_recovers_high_similarity(self):
        g = np.random.default_rng(12)
        model = make_ground_truth(10, 0.8, rng=g)
        x, _, y, _ = sample_responses(model, 500, rng=g)
        res = estimate_moments(x, y, n_boot=100, rng=g)
        assert abs(res.cosine.value - 0.8) <= res.cosine.bias_bound + 4 * res.cosine.std_error


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(4, 12), st.integers(1, 4))
def test_paths_matches_exact_at_order_one(seed, m, n):
    g = np.random.default_rng(seed)
    gp = gram_pair(g.standard_normal((m, n)), g.standard_normal((m, n)))
    assert eigenmoment(1, gp, "paths") == pytest.approx(eigenmoment(1, gp, "exact"), rel=1e-9, abs=1e-12)
