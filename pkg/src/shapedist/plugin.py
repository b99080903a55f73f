"""
Empirical covariances and plug-in shape-distance estimators.

Responses are stored with one row per stimulus and one column per unit. The
library never centers data implicitly; call :func:`center_columns` first if
the populations are not already mean-zero.
"""

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from shapedist.errors import DataError
from shapedist.linalg import as_matrix, nuclear_norm


class EstimatorKind(str, enum.Enum):
    PLUGIN_SQ_PROCRUSTES = "plugin_sq_procrustes"
    PLUGIN_COS_SIMILARITY = "plugin_cos_similarity"
    MOMENT_COS_SIMILARITY = "moment_cos_similarity"
    MOMENT_NUCLEAR_NORM = "moment_nuclear_norm"


_COSINE_KINDS = (EstimatorKind.PLUGIN_COS_SIMILARITY, EstimatorKind.MOMENT_COS_SIMILARITY)


@dataclass(frozen=True)
class ResponseMatrix:
    """Stimulus-by-unit response matrix.

    ``bound`` optionally enforces the bounded-response assumption: every row
    must have Euclidean norm at most ``bound * sqrt(N)``.
    """

    data: np.ndarray
    centered: bool = False
    bound: Optional[float] = None

    def __post_init__(self):
        a = as_matrix(self.data, "response matrix")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise DataError(f"response matrix must be non-empty, got shape {a.shape}")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "data", a)
        if self.bound is not None:
            check_bounded(a, self.bound)

    @property
    def m(self):
        return self.data.shape[0]

    @property
    def n(self):
        return self.data.shape[1]


def as_responses(x):
    return x if isinstance(x, ResponseMatrix) else ResponseMatrix(np.asarray(x, dtype=float))


def check_bounded(data, bound):
    """Raise :class:`DataError` if any row norm exceeds ``bound * sqrt(N)``."""
    if bound <= 0:
        raise DataError("response bound must be positive")
    a = np.asarray(data, dtype=float)
    limit = bound * np.sqrt(a.shape[1])
    norms = np.linalg.norm(a, axis=1)
    bad = np.flatnonzero(norms > limit * (1 + 1e-12))
    if bad.size:
        raise DataError(
            f"row {bad[0]} has norm {norms[bad[0]]:.6g} exceeding B*sqrt(N) = {limit:.6g}"
        )


@dataclass(frozen=True)
class CovarianceSet:
    """Covariances of two populations and their cross-covariance."""

    sigma_ii: np.ndarray
    sigma_jj: np.ndarray
    sigma_ij: np.ndarray

    def __post_init__(self):
        ni, nj = self.sigma_ii.shape[0], self.sigma_jj.shape[0]
        if self.sigma_ii.shape != (ni, ni) or self.sigma_jj.shape != (nj, nj):
            raise DataError("auto-covariances must be square")
        if self.sigma_ij.shape != (ni, nj):
            raise DataError(
                f"cross-covariance has shape {self.sigma_ij.shape}, expected {(ni, nj)}"
            )

    def check_psd(self, tol=1e-10):
        """Check the auto-covariances are symmetric PSD (not expected of split-trial estimates)."""
        for name, s in (("sigma_ii", self.sigma_ii), ("sigma_jj", self.sigma_jj)):
            if np.max(np.abs(s - s.T), initial=0.0) > tol * max(1.0, np.max(np.abs(s))):
                raise DataError(f"{name} is not symmetric")
            if s.size and np.linalg.eigvalsh(s).min() < -tol * max(1.0, np.trace(s)):
                raise DataError(f"{name} is not positive semidefinite")
        return self

    @property
    def trace_ii(self):
        return float(np.trace(self.sigma_ii))

    @property
    def trace_jj(self):
        return float(np.trace(self.sigma_jj))

    @property
    def n(self):
        """Number of singular values of the cross-covariance."""
        return min(self.sigma_ij.shape)


@dataclass(frozen=True)
class EstimateReport:
    value: float
    kind: EstimatorKind
    bias_bound: Optional[float] = None
    std_error: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        lo, hi = self.ci_low, self.ci_high
        if lo is not None and hi is not None and not lo <= self.value <= hi:
            raise DataError(f"confidence interval [{lo}, {hi}] does not contain {self.value}")

    @property
    def clipped(self):
        """Value clipped to ``[0, 1]`` for similarity scores, unchanged otherwise."""
        if self.kind in _COSINE_KINDS:
            return float(min(max(self.value, 0.0), 1.0))
        return self.value

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        d["clipped"] = self.clipped
        return d


def center_columns(x):
    """Subtract the column means; requires at least two stimuli."""
    x = as_responses(x)
    if x.m < 2:
        raise DataError("centering requires at least two stimuli")
    return ResponseMatrix(x.data - x.data.mean(axis=0), centered=True, bound=None)


def _pair(x, y):
    x, y = as_responses(x), as_responses(y)
    if x.m != y.m:
        raise DataError(f"row-count mismatch: {x.m} vs {y.m} stimuli")
    return x, y


def empirical_cross_covariance(x, y):
    """``(1/M) sum_m x_m y_m^T`` as an ``N_x x N_y`` array."""
    x, y = _pair(x, y)
    return x.data.T @ y.data / x.m


def empirical_covariance(x):
    x = as_responses(x)
    c = x.data.T @ x.data / x.m
    return (c + c.T) / 2


def split_trial_covariance(x, x_rep, symmetrize=False):
    """Covariance estimate from two noisy replicates of the same stimuli.

    Noise that is independent across replicates averages out of
    ``(1/M) sum_m x_m x'_m^T``, so the estimate is unbiased for the signal
    covariance. It is not symmetric (or PSD) in general; ``symmetrize``
    returns the symmetric part, which has the same trace.
    """
    x, x_rep = _pair(x, x_rep)
    if x.n != x_rep.n:
        raise DataError(f"unit-count mismatch between replicates: {x.n} vs {x_rep.n}")
    c = x.data.T @ x_rep.data / x.m
    if symmetrize:
        c = (c + c.T) / 2
    return c


def covariance_set(x, y, x_rep=None, y_rep=None):
    """Plug-in :class:`CovarianceSet`, using split-trial auto-covariances when replicates are given."""
    x, y = _pair(x, y)
    sii = split_trial_covariance(x, x_rep) if x_rep is not None else empirical_covariance(x)
    sjj = split_trial_covariance(y, y_rep) if y_rep is not None else empirical_covariance(y)
    cov = CovarianceSet(sii, sjj, empirical_cross_covariance(x, y))
    return cov.check_psd() if x_rep is None and y_rep is None else cov


def plugin_squared_procrustes(cov):
    value = cov.trace_ii + cov.trace_jj - 2 * nuclear_norm(cov.sigma_ij)
    return EstimateReport(float(value), EstimatorKind.PLUGIN_SQ_PROCRUSTES)


def plugin_cosine_similarity(cov):
    ti, tj = cov.trace_ii, cov.trace_jj
    if ti <= 0 or tj <= 0:
        raise DataError(f"cosine similarity needs positive traces, got {ti:.6g} and {tj:.6g}")
    value = nuclear_norm(cov.sigma_ij) / np.sqrt(ti * tj)
    return EstimateReport(float(value), EstimatorKind.PLUGIN_COS_SIMILARITY)


def procrustes_alignment_distance(x, y):
    """``min_Q (1/M) ||X - Y Q||_F^2`` over orthogonal ``Q``, solved directly by SVD."""
    x, y = _pair(x, y)
    if x.n != y.n:
        raise DataError("alignment form requires equal unit counts")
    u, _, vt = np.linalg.svd(y.data.T @ x.data)
    q = u @ vt
    r = x.data - y.data @ q
    return float(np.sum(r * r) / x.m)
