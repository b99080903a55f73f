"""
Method-of-moments estimation of the cross-covariance nuclear norm.

The eigenmoments ``W_p = Tr[(S S^T)^p]`` of the cross-covariance ``S`` are
estimated without bias from products of Gram-matrix entries over ``2p``
distinct stimuli. Three strategies compute the same kind of U-statistic:

``exact``
    Average over every ordered tuple of distinct stimuli. Exponential in
    ``p``; used as a reference on small problems.
``monte_carlo``
    Average over uniformly sampled distinct tuples.
``paths``
    Average over tuples whose stimulus indices are strictly increasing along
    the cycle, evaluated exactly with products of strictly upper-triangular
    Gram matrices in ``O(p M^3)``. This is the default: it is exact (no
    sampling noise) and far less variable than tuple sampling at large ``p``.

A polynomial in the rescaled moments ``W_p / kappa^p`` approximates
``sum_n sqrt(lambda_n)``; coefficients come from :mod:`shapedist.qp`.
"""

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from shapedist.errors import DataError, InsufficientSamplesError
from shapedist.linalg import spectral_norm
from shapedist.plugin import (
    CovarianceSet,
    EstimateReport,
    EstimatorKind,
    _pair,
    covariance_set,
)
from shapedist.qp import CoefficientSolution, select_coefficients

STRATEGIES = ("paths", "exact", "monte_carlo")
DEFAULT_ORDER = 5
DEFAULT_N_BOOT = 500
DEFAULT_N_TUPLES = 10_000
DEFAULT_MARGIN = 1.5


@dataclass(frozen=True)
class GramPair:
    gx: np.ndarray
    gy: np.ndarray

    @property
    def m(self):
        return self.gx.shape[0]


@dataclass(frozen=True)
class EigenmomentVector:
    """Moment estimates ``W_0..W_P``; divided by ``rescale**p`` when ``scaled``."""

    values: np.ndarray
    order: int
    rescale: float
    scaled: bool = True


@dataclass(frozen=True)
class MomentCovariance:
    a: np.ndarray
    n_boot: int
    scaled: bool = True


def gram_pair(x, y):
    x, y = _pair(x, y)
    return GramPair(x.data @ x.data.T, y.data @ y.data.T)


def _check_order(p, m):
    if p < 1:
        raise DataError("moment order must be at least 1")
    if m < 2 * p:
        raise InsufficientSamplesError(f"order {p} needs at least {2 * p} stimuli, got {m}")


def _tuple_products(g, idx):
    """Cycle products for an array of index tuples of shape (n, 2p)."""
    a = idx[:, 0::2]
    b = idx[:, 1::2]
    nxt = np.roll(a, -1, axis=1)
    return np.prod(g.gy[a, b], axis=1) * np.prod(g.gx[b, nxt], axis=1)


def _exact(p, g, chunk=200_000):
    total = 0.0
    count = 0
    it = itertools.permutations(range(g.m), 2 * p)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        total += float(np.sum(_tuple_products(g, block)))
        count += block.shape[0]
    return total / count


def _distinct_tuples(rng, m, width, n, ids=None):
    """``n`` tuples of ``width`` distinct positions in ``range(m)``.

    With ``ids``, positions map to original row identities and tuples that use
    the same identity twice are rejected and redrawn.
    """
    out = np.empty((0, width), dtype=np.intp)
    while out.shape[0] < n:
        need = n - out.shape[0]
        cand = np.argsort(rng.random((need, m)), axis=1)[:, :width]
        if ids is not None:
            lab = np.sort(ids[cand], axis=1)
            ok = np.all(lab[:, 1:] != lab[:, :-1], axis=1)
            cand = cand[ok]
        out = np.vstack([out, cand])
    return out


def _monte_carlo(p, g, n_tuples, rng, ids=None):
    if n_tuples >= math.perm(g.m, 2 * p) and ids is None:
        return _exact(p, g)
    idx = _distinct_tuples(rng, g.m, 2 * p, n_tuples, ids)
    return float(np.mean(_tuple_products(g, idx)))


def elementary_symmetric(w, k):
    """``e_k(w)``: sum over index sets ``i_1 < ... < i_k`` of ``prod w_i``."""
    e = np.zeros(k + 1)
    e[0] = 1.0
    for wi in w:
        e[1:] = e[1:] + wi * e[:-1]
    return float(e[k])


def _paths(order, g, weights=None):
    """Increasing-index cycle estimates for orders ``1..order``.

    Each tuple ``c_1 < c_2 < ... < c_2p`` contributes
    ``gy[c1,c2] gx[c2,c3] ... gy[c_{2p-1},c_2p] gx[c_2p,c1]`` times the
    product of the row weights; the sum is normalised by the weighted tuple
    count, so integer weights reproduce a resample in which tuples reusing an
    original row are excluded.
    """
    m = g.m
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    if np.count_nonzero(w) < 2 * order:
        raise InsufficientSamplesError(
            f"order {order} needs at least {2 * order} distinct stimuli, got {np.count_nonzero(w)}"
        )
    wuy = w[:, None] * np.triu(g.gy, 1)
    wux = w[:, None] * np.triu(g.gx, 1)
    wgx = w[:, None] * g.gx
    out = np.empty(order)
    t = wuy
    for p in range(1, order + 1):
        if p > 1:
            t = t @ wux @ wuy
        out[p - 1] = np.sum(t * wgx.T) / elementary_symmetric(w, 2 * p)
    return out


def eigenmoment(p, g, strategy="paths", n_tuples=DEFAULT_N_TUPLES, rng=None):
    """Unbiased estimate of ``W_p = Tr[(S S^T)^p]`` from a :class:`GramPair`."""
    _check_order(p, g.m)
    if strategy == "exact":
        return _exact(p, g)
    if strategy == "monte_carlo":
        if rng is None:
            raise DataError("monte_carlo strategy needs a random generator")
        return _monte_carlo(p, g, n_tuples, rng)
    if strategy == "paths":
        return float(_paths(p, g)[-1])
    raise DataError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def eigenmoments(g, order, dims, strategy="paths", n_tuples=DEFAULT_N_TUPLES, rng=None,
                 weights=None, ids=None):
    """Unscaled estimates ``(W_0, ..., W_P)`` with ``W_0 = dims``."""
    _check_order(order, g.m)
    if strategy == "paths":
        rest = _paths(order, g, weights)
    elif strategy == "monte_carlo":
        if rng is None:
            raise DataError("monte_carlo strategy needs a random generator")
        rest = np.array([_monte_carlo(p, g, n_tuples, rng, ids) for p in range(1, order + 1)])
    elif strategy == "exact":
        rest = np.array([_exact(p, g) for p in range(1, order + 1)])
    else:
        raise DataError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    return np.concatenate([[float(dims)], rest])


def scale_moments(values, kappa):
    p = np.arange(len(values))
    return np.asarray(values, dtype=float) / float(kappa) ** p


def eigenmoment_vector(x, y, order, kappa, strategy="paths", n_tuples=DEFAULT_N_TUPLES, rng=None):
    x, y = _pair(x, y)
    g = gram_pair(x, y)
    raw = eigenmoments(g, order, min(x.n, y.n), strategy, n_tuples, rng)
    return EigenmomentVector(scale_moments(raw, kappa), order, float(kappa), scaled=True)


def rescale_factor(cov, margin=DEFAULT_MARGIN):
    """Eigenvalue scale ``kappa`` such that the moments live on ``[0, 1]``.

    ``kappa = margin * s_1(S)^2``; when ``S`` vanishes, falls back to
    ``margin * Tr[S_ii] Tr[S_jj] / N^2``.
    """
    if margin < 1:
        raise DataError("rescale margin must be at least 1")
    s1 = spectral_norm(cov.sigma_ij)
    if s1 > 0:
        return margin * s1**2
    fallback = margin * cov.trace_ii * cov.trace_jj / cov.n**2
    if fallback <= 0:
        raise DataError("all covariances are zero; cannot choose an eigenvalue scale")
    return fallback


def _replicate_seeds(rng, n):
    base = int(rng.integers(0, 2**63 - 1))
    return [np.random.SeedSequence(base, spawn_key=(b,)) for b in range(n)]


def worker_count(default=None):
    env = os.environ.get("SHAPEDIST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise DataError(f"SHAPEDIST_THREADS must be an integer, got {env!r}") from None
    return default or (os.cpu_count() or 1)


def bootstrap_moment_covariance(x, y, order, kappa, n_boot=DEFAULT_N_BOOT, rng=None,
                                strategy="paths", n_tuples=DEFAULT_N_TUPLES, workers=None):
    """Bootstrap covariance of the scaled moment estimates.

    Each replicate resamples the ``M`` stimuli with replacement (stimuli are
    drawn from their own derived seed, so results do not depend on
    ``workers``). Tuples that would use one original stimulus twice are
    excluded. Row and column 0 (the deterministic ``W_0``) are zero.
    """
    x, y = _pair(x, y)
    if n_boot < 2:
        raise DataError("n_boot must be at least 2")
    if rng is None:
        raise DataError("bootstrap needs a random generator")
    m = x.m
    _check_order(order, m)
    g = gram_pair(x, y)
    dims = min(x.n, y.n)
    seeds = _replicate_seeds(rng, n_boot)

    def replicate(seed):
        r = np.random.default_rng(seed)
        idx = r.integers(0, m, size=m)
        if strategy == "paths":
            w = np.bincount(idx, minlength=m)
            if np.count_nonzero(w) < 2 * order:
                raise InsufficientSamplesError("bootstrap replicate has too few distinct stimuli")
            raw = eigenmoments(g, order, dims, "paths", weights=w)
        else:
            sub = GramPair(g.gx[np.ix_(idx, idx)], g.gy[np.ix_(idx, idx)])
            raw = eigenmoments(sub, order, dims, strategy, n_tuples, r, ids=idx)
        return scale_moments(raw, kappa)

    n_workers = worker_count() if workers is None else workers
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            reps = list(pool.map(replicate, seeds))
    else:
        reps = [replicate(s) for s in seeds]
    reps = np.array(reps)
    a = np.cov(reps[:, 1:], rowvar=False, ddof=1).reshape(order, order)
    full = np.zeros((order + 1, order + 1))
    full[1:, 1:] = (a + a.T) / 2
    return MomentCovariance(full, n_boot, scaled=True)


def moment_nuclear_norm(moments, coeffs):
    """``sqrt(kappa) * sum_p gamma_p W_p / kappa^p``, the unscaled nuclear-norm estimate."""
    if not moments.scaled:
        raise DataError("moments must be rescaled with the same kappa used for the coefficients")
    if len(moments.values) != len(coeffs.gamma):
        raise DataError(
            f"order mismatch: {len(moments.values) - 1} moments vs {coeffs.order} coefficients"
        )
    return float(np.sqrt(moments.rescale) * (coeffs.gamma @ moments.values))


def critical_value(alpha):
    if not 0 < alpha < 1:
        raise DataError("alpha must lie in (0, 1)")
    return float(norm.ppf(1 - alpha / 2))


def bias_bound(coeffs, dims, kappa):
    return float(np.sqrt(kappa) * dims * coeffs.u)


def standard_error(coeffs, kappa):
    return float(np.sqrt(kappa * coeffs.variance))


def confidence_interval(estimate, coeffs, dims, kappa, alpha=0.05, denom=None):
    """Interval ``estimate -/+ sqrt(kappa) (z sqrt(gamma^T A gamma) + N u)``, optionally divided by ``denom``."""
    half = critical_value(alpha) * standard_error(coeffs, kappa) + bias_bound(coeffs, dims, kappa)
    lo, hi = estimate - half, estimate + half
    if denom is not None:
        if denom <= 0:
            raise DataError("denominator must be positive")
        lo, hi = lo / denom, hi / denom
    return float(lo), float(hi)


def moment_cosine_similarity(norm_estimate, denom, coeffs=None, dims=None, kappa=None, alpha=None):
    """Cosine similarity from a nuclear-norm estimate; unclipped.

    When ``coeffs``, ``dims`` and ``kappa`` are supplied the report carries the
    bias bound and standard error on the similarity scale, plus a confidence
    interval if ``alpha`` is given.
    """
    if denom <= 0:
        raise DataError(f"denominator must be positive, got {denom}")
    value = norm_estimate / denom
    if coeffs is None:
        return EstimateReport(float(value), EstimatorKind.MOMENT_COS_SIMILARITY)
    lo = hi = None
    if alpha is not None:
        lo, hi = confidence_interval(norm_estimate, coeffs, dims, kappa, alpha, denom)
    return EstimateReport(
        float(value),
        EstimatorKind.MOMENT_COS_SIMILARITY,
        bias_bound=bias_bound(coeffs, dims, kappa) / denom,
        std_error=standard_error(coeffs, kappa) / denom,
        ci_low=lo,
        ci_high=hi,
        alpha=alpha,
    )


def cap_to_scaled(bias_cap, denom, kappa):
    """Convert a cap on the similarity score into a cap on ``N u`` in scaled units."""
    if bias_cap is None:
        return None
    return float(bias_cap) * denom / np.sqrt(kappa)


@dataclass(frozen=True)
class MomentResult:
    """Everything produced by one run of :func:`estimate_moments`."""

    nuclear: EstimateReport
    cosine: Optional[EstimateReport]
    moments: EigenmomentVector
    covariance: MomentCovariance
    coefficients: CoefficientSolution
    kappa: float
    denom: Optional[float]
    provenance: dict = field(default_factory=dict)


def estimate_moments(x, y, *, order=DEFAULT_ORDER, bias_cap=None, n_boot=DEFAULT_N_BOOT,
                     alpha=0.05, grid_size=1000, margin=DEFAULT_MARGIN, rng=None,
                     x_rep=None, y_rep=None, cov: Optional[CovarianceSet] = None,
                     denom=None, intercept=True, strategy="paths", workers=None):
    """Moment-based nuclear norm and cosine similarity with bootstrap uncertainty.

    ``bias_cap`` bounds the worst-case absolute bias of the cosine similarity
    score. The denominator defaults to the plug-in (or split-trial) traces.
    """
    x, y = _pair(x, y)
    if cov is None:
        cov = covariance_set(x, y, x_rep, y_rep)
    dims = cov.n
    kappa = rescale_factor(cov, margin)
    if denom is None:
        ti, tj = cov.trace_ii, cov.trace_jj
        if ti <= 0 or tj <= 0:
            raise DataError(f"trace estimates must be positive, got {ti:.6g} and {tj:.6g}")
        denom = float(np.sqrt(ti * tj))
    mom = eigenmoment_vector(x, y, order, kappa, strategy, rng=rng)
    a = bootstrap_moment_covariance(x, y, order, kappa, n_boot, rng, strategy, workers=workers)
    coeffs = select_coefficients(a.a, dims, order, grid_size,
                                 cap_to_scaled(bias_cap, denom, kappa), intercept)
    nuc = moment_nuclear_norm(mom, coeffs)
    lo, hi = confidence_interval(nuc, coeffs, dims, kappa, alpha)
    nuclear = EstimateReport(nuc, EstimatorKind.MOMENT_NUCLEAR_NORM,
                             bias_bound=bias_bound(coeffs, dims, kappa),
                             std_error=standard_error(coeffs, kappa),
                             ci_low=lo, ci_high=hi, alpha=alpha)
    cosine = moment_cosine_similarity(nuc, denom, coeffs, dims, kappa, alpha)
    prov = {
        "order": order, "bias_cap": bias_cap, "n_boot": n_boot, "alpha": alpha,
        "grid_size": grid_size, "margin": margin, "kappa": kappa, "strategy": strategy,
        "intercept": intercept, "split_trial": x_rep is not None or y_rep is not None,
        "denominator": denom, "gamma": coeffs.gamma.tolist(), "u": coeffs.u,
        "variance_term": coeffs.variance,
    }
    return MomentResult(nuclear, cosine, mom, a, coeffs, kappa, denom, prov)
