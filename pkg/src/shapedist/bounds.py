"""Closed-form error bounds and random-matrix asymptotes for the plug-in estimator."""

import math
from dataclasses import dataclass

import numpy as np

from shapedist.errors import DataError


@dataclass(frozen=True)
class BoundParams:
    b: float
    n: int
    m: int
    delta: float = 0.05

    def __post_init__(self):
        if self.b <= 0 or self.n < 1 or self.m < 1:
            raise DataError("B, N and M must be positive")
        if not 0 < self.delta < 1:
            raise DataError("delta must lie in (0, 1)")


def lemma1_bound(params):
    """High-probability deviation of the plug-in trace."""
    b, n, m = params.b, params.n, params.m
    return b * math.sqrt(n / m) * math.sqrt(2 * math.log(2 / params.delta))


def lemma2_bound(b, n, m):
    """Bound on the expected absolute error of the plug-in nuclear norm."""
    if b <= 0 or n < 1 or m < 1:
        raise DataError("B, N and M must be positive")
    log2n = math.log(2 * n)
    return 2 * b**2 * n**2 * log2n / (3 * m) + 2 * b**2 * n**2 * math.sqrt(log2n) / math.sqrt(m)


def theorem1_bound(params):
    """High-probability bound on ``|rho_hat^2 - rho^2| / N``."""
    b, n, m, delta = params.b, params.n, params.m, params.delta
    log2n = math.log(2 * n)
    return (
        2 * b**2 * n * log2n / (3 * m)
        + 2 * b**2 * n * math.sqrt(log2n) / math.sqrt(m)
        + (b**2 / math.sqrt(m) + 2 * b / math.sqrt(n * m)) * math.sqrt(2 * math.log(6 / delta))
    )


def plugin_error_lower_bound(params):
    """Asymptotic ``|rho_hat^2 - rho^2| / N`` for independent Rademacher populations."""
    return 16 * params.b**2 / (3 * math.pi) * math.sqrt(params.n / params.m)


def ginibre_nuclear_asymptote(n, m):
    """Limiting nuclear norm of the cross-covariance of independent unit-variance populations."""
    if n < 1 or m < 1:
        raise DataError("n and m must be positive")
    return 8 / (3 * math.pi) * n**1.5 / math.sqrt(m)


def quarter_circle_density(s, sigma=1.0):
    """Singular-value density of a square Ginibre matrix with entry variance ``sigma^2 / N``."""
    if sigma <= 0:
        raise DataError("sigma must be positive")
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 2 * sigma)
    out = np.zeros_like(s)
    out[inside] = np.sqrt(4 * sigma**2 - s[inside] ** 2) / (math.pi * sigma**2)
    return out if out.ndim else float(out)


def quarter_circle_cdf(s, sigma=1.0):
    s = np.clip(np.asarray(s, dtype=float), 0.0, 2 * sigma)
    val = (s / 2 * np.sqrt(4 * sigma**2 - s**2) + 2 * sigma**2 * np.arcsin(s / (2 * sigma)))
    out = val / (math.pi * sigma**2)
    return out if out.ndim else float(out)


def bounds_table(points):
    """Evaluate every bound at each ``(b, n, m, delta)`` point."""
    rows = []
    for pt in points:
        p = pt if isinstance(pt, BoundParams) else BoundParams(**pt)
        rows.append({
            "b": p.b, "n": p.n, "m": p.m, "delta": p.delta,
            "lemma1": lemma1_bound(p),
            "lemma2": lemma2_bound(p.b, p.n, p.m),
            "theorem1": theorem1_bound(p),
            "theorem2": plugin_error_lower_bound(p),
        })
    return rows
