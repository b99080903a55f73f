"""
Synthetic populations with known shape similarity.

Ground-truth models couple two Gaussian populations through a joint
covariance whose cross block has prescribed singular values; both
populations share a flat auto-covariance.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from shapedist.bounds import ginibre_nuclear_asymptote
from shapedist.errors import DataError, InfeasibleError
from shapedist.linalg import nuclear_norm, random_orthogonal
from shapedist.plugin import empirical_cross_covariance

SPECTRUM_SHAPES = ("flat", "linear_decay")


@dataclass(frozen=True)
class GroundTruthModel:
    n: int
    sigma_ii: np.ndarray
    sigma_jj: np.ndarray
    sigma_ij: np.ndarray
    joint_factor: np.ndarray
    true_nuclear: float
    true_cos: float
    true_sq_procrustes: float

    @property
    def joint(self):
        n = self.n
        out = np.empty((2 * n, 2 * n))
        out[:n, :n] = self.sigma_ii
        out[n:, n:] = self.sigma_jj
        out[:n, n:] = self.sigma_ij
        out[n:, :n] = self.sigma_ij.T
        return out

    @property
    def denominator(self):
        return float(np.sqrt(np.trace(self.sigma_ii) * np.trace(self.sigma_jj)))


@dataclass(frozen=True)
class NoiseConfig:
    noise_std: float = 0.0
    replicates: int = 1

    def __post_init__(self):
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")
        if self.replicates not in (1, 2):
            raise DataError("replicates must be 1 or 2")


def _shape(n, spectrum_shape):
    if isinstance(spectrum_shape, str):
        if spectrum_shape == "flat":
            return np.ones(n)
        if spectrum_shape == "linear_decay":
            return np.arange(n, 0, -1, dtype=float)
        raise DataError(f"unknown spectrum shape {spectrum_shape!r}")
    d = np.asarray(spectrum_shape, dtype=float)
    if d.shape != (n,) or np.any(d < 0) or not np.any(d > 0):
        raise DataError("custom spectrum must be n non-negative values, not all zero")
    return d


def make_ground_truth(n, target_cos, trace_scale=1.0,
                      spectrum_shape: Union[str, Sequence[float]] = "flat", rng=None):
    """Build a model whose cosine shape similarity equals ``target_cos``.

    ``sigma_ij = Q1 diag(d) Q2^T`` with Haar-random ``Q1, Q2``. The joint
    covariance is PSD exactly when ``max(d) <= trace_scale / n``; targets
    violating that ceiling raise :class:`InfeasibleError`.
    """
    if n < 1:
        raise DataError("n must be positive")
    if not 0 <= target_cos <= 1:
        raise DataError("target_cos must lie in [0, 1]")
    if trace_scale <= 0:
        raise DataError("trace_scale must be positive")
    if rng is None:
        raise DataError("make_ground_truth needs a random generator")
    var = trace_scale / n
    shape = _shape(n, spectrum_shape)
    d = shape * (target_cos * trace_scale / shape.sum())
    if d.max() > var * (1 + 1e-12):
        raise InfeasibleError(
            f"target similarity {target_cos} with this spectrum needs a singular value "
            f"{d.max():.4g} above the PSD ceiling {var:.4g}"
        )
    d = np.minimum(d, var)
    r1 = random_orthogonal(n, rng)
    r2 = random_orthogonal(n, rng)
    q1 = random_orthogonal(n, rng)
    q2 = random_orthogonal(n, rng)
    sii = r1 @ (var * np.eye(n)) @ r1.T
    sjj = r2 @ (var * np.eye(n)) @ r2.T
    sii, sjj = (sii + sii.T) / 2, (sjj + sjj.T) / 2
    sij = (q1 * d) @ q2.T
    joint = np.block([[sii, sij], [sij.T, sjj]])
    try:
        factor = np.linalg.cholesky(joint + 1e-12 * var * np.eye(2 * n))
    except np.linalg.LinAlgError as exc:
        raise InfeasibleError(f"joint covariance is not PSD: {exc}") from exc
    nuc = float(d.sum())
    return GroundTruthModel(
        n=n,
        sigma_ii=sii,
        sigma_jj=sjj,
        sigma_ij=sij,
        joint_factor=factor,
        true_nuclear=nuc,
        true_cos=nuc / trace_scale,
        true_sq_procrustes=2 * trace_scale - 2 * nuc,
    )


def sample_responses(model, m, noise=None, rng=None):
    """Draw ``m`` stimuli; returns ``(x, x_rep, y, y_rep)``.

    Replicates reuse each stimulus's signal row and add independent Gaussian
    noise per replicate and per network; ``x_rep``/``y_rep`` are ``None`` for
    a single replicate.
    """
    if m < 1:
        raise DataError("m must be positive")
    noise = noise or NoiseConfig()
    n = model.n
    z = rng.standard_normal((m, 2 * n)) @ model.joint_factor.T
    sx, sy = z[:, :n], z[:, n:]

    def noisy(s):
        if noise.noise_std == 0:
            return s.copy()
        return s + noise.noise_std * rng.standard_normal(s.shape)

    x, y = noisy(sx), noisy(sy)
    if noise.replicates == 1:
        return x, None, y, None
    return x, noisy(sx), y, noisy(sy)


def rademacher_pair(m, n, b=1.0, rng=None):
    """Independent populations with i.i.d. entries uniform on ``{-b, +b}``."""
    if m < 1 or n < 1:
        raise DataError("m and n must be positive")
    x = b * (2.0 * rng.integers(0, 2, size=(m, n)) - 1.0)
    y = b * (2.0 * rng.integers(0, 2, size=(m, n)) - 1.0)
    return x, y


def rademacher_true_sq_procrustes(n, b=1.0):
    return 2 * b**2 * n


def verify_lower_bound_experiment(n, m_grid, trials, rng, kind="gaussian"):
    """Mean plug-in cross-covariance nuclear norm of independent populations vs the asymptote.

    Returns one row per ``m``; an empty list when ``trials`` is 0.
    """
    if kind not in ("gaussian", "rademacher"):
        raise DataError(f"unknown kind {kind!r}")
    if trials == 0:
        return []
    rows = []
    for m in m_grid:
        vals = np.empty(trials)
        for t in range(trials):
            if kind == "gaussian":
                x = rng.standard_normal((m, n))
                y = rng.standard_normal((m, n))
            else:
                x, y = rademacher_pair(m, n, 1.0, rng)
            vals[t] = nuclear_norm(empirical_cross_covariance(x, y))
        asym = ginibre_nuclear_asymptote(n, m)
        mean = float(vals.mean())
        rows.append({
            "n": n, "m": int(m), "kind": kind, "trials": trials,
            "mean_norm": mean,
            "std_norm": float(vals.std(ddof=1)) if trials > 1 else 0.0,
            "asymptote": asym,
            "rel_error": (mean - asym) / asym,
        })
    return rows
