"""
Seeded simulation sweeps over ground-truth models.

Per-trial random streams are derived from ``(seed, group, stream, index)``
with :class:`numpy.random.SeedSequence`, so results do not depend on how
trials are scheduled across workers. Conditions that differ only in their
bias cap form one *group*: they share the model, the moment covariance and
the simulated datasets, which makes cap sweeps paired comparisons.

In simulation the moment estimator uses the model's true traces for its
denominator, the model's true top singular value for the eigenvalue scale
and a Monte-Carlo estimate of the true moment covariance from independent
pilot datasets, so that its bias and variance can be studied in isolation.
"""

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from shapedist.errors import DataError, InfeasibleError
from shapedist.moments import (
    DEFAULT_MARGIN,
    DEFAULT_ORDER,
    bias_bound,
    confidence_interval,
    eigenmoments,
    gram_pair,
    rescale_factor,
    scale_moments,
    standard_error,
    worker_count,
    cap_to_scaled,
)
from shapedist.plugin import CovarianceSet, covariance_set, plugin_cosine_similarity
from shapedist.qp import select_coefficients
from shapedist.synthetic import NoiseConfig, make_ground_truth, sample_responses

COLUMNS = (
    "preset", "condition", "group", "n", "m", "truth", "bias_cap", "spectrum",
    "noise_std", "estimator", "mean", "std", "se", "bias_bound", "variance_term",
    "u", "coverage", "trials", "status", "seed", "lineage",
)

_STREAM_MODEL, _STREAM_PILOT, _STREAM_TRIAL = 0, 1, 2


@dataclass(frozen=True)
class Condition:
    n: int = 30
    m: int = 200
    truth: float = 0.2
    bias_cap: Optional[float] = None
    spectrum: str = "flat"
    trace_scale: float = 1.0
    noise_std: float = 0.0
    replicates: int = 1
    order: int = DEFAULT_ORDER
    grid_size: int = 1000
    alpha: float = 0.05
    margin: float = DEFAULT_MARGIN
    n_pilot: int = 500
    intercept: bool = True

    def data_key(self):
        return (self.n, self.m, round(self.truth, 12), self.spectrum, self.trace_scale,
                self.noise_std, self.replicates, self.order, self.margin, self.n_pilot)


def _grid(**axes):
    keys = list(axes)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(axes[k] for k in keys))]


# Named sweeps; each entry is data only (a parameter grid and a default trial count).
PRESETS = {
    "fig2a": {"trials": 500, "grid": _grid(n=[30], m=[200],
                                          truth=[float(t) for t in np.linspace(0, 1, 20)],
                                          bias_cap=[0.1])},
    "fig2b": {"trials": 500, "grid": _grid(n=[30], m=[50, 100, 200, 400, 800],
                                          truth=[0.2], bias_cap=[0.05])},
    "fig2c": {"trials": 500, "grid": _grid(n=[10, 20, 30, 40, 60, 80], m=[200],
                                          truth=[0.2], bias_cap=[0.1])},
    "fig2d": {"trials": 1000, "grid": _grid(n=[30], m=[200], truth=[0.2], bias_cap=[0.05])},
    "fig3a": {"trials": 500, "grid": _grid(n=[30], m=[200], truth=[0.2],
                                          bias_cap=[None, 0.2, 0.1, 0.05, 0.03, 0.02, 0.015])},
}


def preset_conditions(name):
    if name not in PRESETS:
        raise DataError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)} or 'custom'")
    return [Condition(**c) for c in PRESETS[name]["grid"]], PRESETS[name]["trials"]


def load_grid(path):
    """Read a custom sweep grid from JSON.

    Either a list of condition objects, or an object mapping field names to
    lists of values (expanded as a Cartesian product). An optional top-level
    ``"trials"`` sets the default trial count.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"grid file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"grid file {path} is not valid JSON: {exc}") from None
    trials = None
    if isinstance(spec, dict):
        spec = dict(spec)
        trials = spec.pop("trials", None)
        axes = {k: (v if isinstance(v, list) else [v]) for k, v in spec.items()}
        spec = _grid(**axes)
    try:
        return [Condition(**c) for c in spec], trials
    except TypeError as exc:
        raise DataError(f"bad condition in grid file: {exc}") from None


def _seq(seed, group, stream, index):
    return np.random.SeedSequence(seed, spawn_key=(group, stream, index))


def _rng(seed, group, stream, index):
    return np.random.default_rng(_seq(seed, group, stream, index))


@dataclass
class _GroupData:
    model: object
    kappa: float
    a: np.ndarray
    moments: np.ndarray          # scaled, one row per trial
    plugin_cos: np.ndarray
    error: Optional[str] = None


def _moments_of(x, y, order, kappa):
    g = gram_pair(x, y)
    return scale_moments(eigenmoments(g, order, min(x.shape[1], y.shape[1])), kappa)


def _simulate_group(cond, trials, seed, group, pool):
    try:
        model = make_ground_truth(cond.n, cond.truth, cond.trace_scale, cond.spectrum,
                                  _rng(seed, group, _STREAM_MODEL, 0))
    except InfeasibleError as exc:
        return _GroupData(None, float("nan"), None, None, None, error=str(exc))
    true_cov = CovarianceSet(model.sigma_ii, model.sigma_jj, model.sigma_ij)
    kappa = rescale_factor(true_cov, cond.margin)
    noise = NoiseConfig(cond.noise_std, cond.replicates)

    def pilot(k):
        r = _rng(seed, group, _STREAM_PILOT, k)
        x, _, y, _ = sample_responses(model, cond.m, noise, r)
        return _moments_of(x, y, cond.order, kappa)

    def trial(t):
        r = _rng(seed, group, _STREAM_TRIAL, t)
        x, xr, y, yr = sample_responses(model, cond.m, noise, r)
        cos = plugin_cosine_similarity(covariance_set(x, y, xr, yr)).value
        return _moments_of(x, y, cond.order, kappa), cos

    pil = np.array(list(pool.map(pilot, range(cond.n_pilot))))
    a = np.zeros((cond.order + 1, cond.order + 1))
    a[1:, 1:] = np.cov(pil[:, 1:], rowvar=False, ddof=1).reshape(cond.order, cond.order)
    out = list(pool.map(trial, range(trials)))
    moments = np.array([o[0] for o in out]).reshape(trials, cond.order + 1)
    plugin = np.array([o[1] for o in out])
    return _GroupData(model, kappa, a, moments, plugin)


def _summary(values):
    k = len(values)
    mean = float(np.mean(values)) if k else float("nan")
    std = float(np.std(values, ddof=1)) if k > 1 else float("nan")
    se = float(std / np.sqrt(k)) if k > 1 else float("nan")
    return mean, std, se


def _rows_for(preset, ci, gi, cond, data, trials, seed):
    base = {
        "preset": preset, "condition": ci, "group": gi, "n": cond.n, "m": cond.m,
        "truth": cond.truth, "bias_cap": cond.bias_cap, "spectrum": cond.spectrum,
        "noise_std": cond.noise_std, "trials": trials, "seed": seed,
        "lineage": f"{seed}/{gi}",
    }
    empty = dict.fromkeys(("mean", "std", "se", "bias_bound", "variance_term", "u", "coverage"))
    if data.error:
        return [{**base, **empty, "estimator": e, "status": f"infeasible: {data.error}"}
                for e in ("plugin", "moments")]
    mean, std, se = _summary(data.plugin_cos)
    rows = [{**base, **empty, "estimator": "plugin", "mean": mean, "std": std, "se": se, "status": "ok"}]
    denom = data.model.denominator
    try:
        coeffs = select_coefficients(data.a, cond.n, cond.order, cond.grid_size,
                                     cap_to_scaled(cond.bias_cap, denom, data.kappa),
                                     cond.intercept)
    except InfeasibleError as exc:
        rows.append({**base, **empty, "estimator": "moments", "status": f"infeasible: {exc}"})
        return rows
    est = np.sqrt(data.kappa) * (data.moments @ coeffs.gamma) / denom
    lows, highs = [], []
    for e in est:
        lo, hi = confidence_interval(e * denom, coeffs, cond.n, data.kappa, cond.alpha, denom)
        lows.append(lo)
        highs.append(hi)
    covered = (np.array(lows) <= cond.truth) & (cond.truth <= np.array(highs))
    mean, std, se = _summary(est)
    rows.append({
        **base, "estimator": "moments", "mean": mean, "std": std, "se": se,
        "bias_bound": bias_bound(coeffs, cond.n, data.kappa) / denom,
        "variance_term": coeffs.variance, "u": coeffs.u,
        "coverage": float(np.mean(covered)) if trials else float("nan"),
        "status": "ok",
    })
    return rows


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    columns: tuple = COLUMNS

    def select(self, estimator=None, **match):
        out = []
        for r in self.rows:
            if estimator is not None and r["estimator"] != estimator:
                continue
            if all(r.get(k) == v for k, v in match.items()):
                out.append(r)
        return out


def run_sweep(conditions, trials, seed, preset="custom", workers=None):
    """Run every condition for ``trials`` simulated datasets; returns a :class:`SweepResult`."""
    if seed is None:
        raise DataError("a seed is required for simulation sweeps")
    if trials < 0:
        raise DataError("trials must be non-negative")
    keys = {}
    for c in conditions:
        keys.setdefault(c.data_key(), len(keys))
    n_workers = worker_count() if workers is None else workers
    rows = []
    cache = {}
    with ThreadPoolExecutor(n_workers) as pool:
        for ci, cond in enumerate(conditions):
            gi = keys[cond.data_key()]
            if gi not in cache:
                cache[gi] = _simulate_group(cond, trials, seed, gi, pool)
            rows.extend(_rows_for(preset, ci, gi, cond, cache[gi], trials, seed))
    return SweepResult(rows)


def run_preset(name, trials=None, seed=0, workers=None, **overrides):
    conds, default_trials = preset_conditions(name)
    if overrides:
        conds = [replace(c, **overrides) for c in conds]
    return run_sweep(conds, default_trials if trials is None else trials, seed, name, workers)
