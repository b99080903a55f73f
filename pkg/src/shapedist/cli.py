"""Command-line interface: ``shapedist estimate|simulate|verify-lower-bound|bounds``."""

import argparse
import sys
from dataclasses import asdict

import numpy as np

from shapedist import __version__
from shapedist.bounds import bounds_table
from shapedist.errors import ShapeDistError
from shapedist.io import atomic_write, load_bounds_grid, load_response_csv, to_csv, to_json
from shapedist.moments import DEFAULT_MARGIN, DEFAULT_N_BOOT, DEFAULT_ORDER, estimate_moments
from shapedist.plugin import covariance_set, plugin_cosine_similarity, plugin_squared_procrustes
from shapedist.sweeps import COLUMNS, load_grid, preset_conditions, run_sweep, PRESETS
from shapedist.synthetic import verify_lower_bound_experiment

EXIT_USAGE = 2

ESTIMATE_COLUMNS = ("estimator", "value", "clipped", "bias_bound", "std_error",
                    "ci_low", "ci_high", "alpha")
LOWER_BOUND_COLUMNS = ("n", "m", "kind", "trials", "mean_norm", "std_norm", "asymptote",
                       "rel_error")
BOUNDS_COLUMNS = ("b", "n", "m", "delta", "lemma1", "lemma2", "theorem1", "theorem2")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _int_list(text):
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(prog="shapedist", description="Shape distance estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate shape similarity between two response files")
    est.add_argument("--x", required=True, help="CSV of responses, rows = stimuli")
    est.add_argument("--y", required=True)
    est.add_argument("--x-rep", help="second replicate of x, enables split-trial traces")
    est.add_argument("--y-rep")
    est.add_argument("--estimator", choices=["plugin", "moments", "both"], default="both")
    est.add_argument("--order", type=_positive_int, default=DEFAULT_ORDER)
    est.add_argument("--bias-cap", type=float, default=None,
                     help="maximal absolute bias of the similarity score")
    est.add_argument("--n-boot", type=_positive_int, default=DEFAULT_N_BOOT)
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--grid-size", type=_positive_int, default=1000)
    est.add_argument("--margin", type=float, default=DEFAULT_MARGIN)
    est.add_argument("--no-intercept", action="store_true",
                     help="drop the constant term of the polynomial")
    est.add_argument("--center", action="store_true", help="center columns before estimating")
    est.add_argument("--bound", type=float, default=None,
                     help="check that every row norm is at most B*sqrt(N)")
    est.add_argument("--seed", type=int)
    _output_args(est)

    sim = sub.add_parser("simulate", help="run a simulation sweep")
    sim.add_argument("--preset", choices=sorted(PRESETS) + ["custom"], required=True)
    sim.add_argument("--grid", help="JSON parameter grid (required for --preset custom)")
    sim.add_argument("--trials", type=int)
    sim.add_argument("--seed", type=int, required=True)
    _output_args(sim, default_format="csv")

    lb = sub.add_parser("verify-lower-bound", help="compare plug-in norms with the Ginibre asymptote")
    lb.add_argument("--n", type=_positive_int, required=True)
    lb.add_argument("--m-grid", type=_int_list, required=True, help="comma-separated sample counts")
    lb.add_argument("--trials", type=int, default=20)
    lb.add_argument("--kind", choices=["gaussian", "rademacher"], default="gaussian")
    lb.add_argument("--seed", type=int, required=True)
    _output_args(lb, default_format="csv")

    bd = sub.add_parser("bounds", help="evaluate the closed-form error bounds on a grid")
    bd.add_argument("--grid", required=True, help="CSV (b,n,m,delta) or JSON grid")
    _output_args(bd, default_format="csv")
    return parser


def _output_args(p, default_format="json"):
    p.add_argument("--out", help="output path (default: standard output)")
    p.add_argument("--format", choices=["json", "csv"], default=default_format)


def _emit(args, command, rows, columns, provenance, payload=None):
    if args.format == "json":
        text = to_json(command, payload if payload is not None else {"rows": rows}, provenance)
    else:
        text = to_csv(rows, columns)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def _load(path, bound, center):
    from shapedist.plugin import center_columns

    r = load_response_csv(path, bound=bound)
    return center_columns(r) if center else r


def cmd_estimate(args):
    if args.estimator in ("moments", "both") and args.seed is None:
        raise _Usage("--seed is required when the moment estimator runs")
    if (args.x_rep is None) != (args.y_rep is None):
        raise _Usage("--x-rep and --y-rep must be given together")
    x = _load(args.x, args.bound, args.center)
    y = _load(args.y, args.bound, args.center)
    xr = _load(args.x_rep, args.bound, args.center) if args.x_rep else None
    yr = _load(args.y_rep, args.bound, args.center) if args.y_rep else None
    split = xr is not None
    cov = covariance_set(x, y, xr, yr)
    prov = {
        "version": __version__, "estimator": args.estimator, "inputs": {
            "x": args.x, "y": args.y, "x_rep": args.x_rep, "y_rep": args.y_rep},
        "m": x.m, "n_x": x.n, "n_y": y.n, "centered": args.center, "split_trial": split,
        "order": args.order, "bias_cap": args.bias_cap, "n_boot": args.n_boot,
        "alpha": args.alpha, "grid_size": args.grid_size, "margin": args.margin,
        "intercept": not args.no_intercept, "seed": args.seed,
        "trace_x": cov.trace_ii, "trace_y": cov.trace_jj,
    }
    reports = {}
    if args.estimator in ("plugin", "both"):
        reports["plugin_sq_procrustes"] = plugin_squared_procrustes(cov)
        reports["plugin_cos_similarity"] = plugin_cosine_similarity(cov)
    if args.estimator in ("moments", "both"):
        res = estimate_moments(
            x, y, order=args.order, bias_cap=args.bias_cap, n_boot=args.n_boot,
            alpha=args.alpha, grid_size=args.grid_size, margin=args.margin,
            rng=np.random.default_rng(args.seed), x_rep=xr, y_rep=yr, cov=cov,
            intercept=not args.no_intercept)
        reports["moment_nuclear_norm"] = res.nuclear
        reports["moment_cos_similarity"] = res.cosine
        prov.update(kappa=res.kappa, denominator=res.denom, gamma=res.coefficients.gamma,
                    u=res.coefficients.u, variance_term=res.coefficients.variance,
                    eigenmoments=res.moments.values, strategy=res.provenance["strategy"])
    rows = []
    for name, rep in reports.items():
        d = rep.to_dict()
        d["estimator"] = name
        rows.append(d)
    payload = {"estimates": {name: rep.to_dict() for name, rep in reports.items()}}
    _emit(args, "estimate", rows, ESTIMATE_COLUMNS, prov, payload)


def cmd_simulate(args):
    if args.preset == "custom":
        if not args.grid:
            raise _Usage("--grid is required with --preset custom")
        conds, trials = load_grid(args.grid)
        trials = trials if trials is not None else 500
    else:
        if args.grid:
            raise _Usage("--grid only applies to --preset custom")
        conds, trials = preset_conditions(args.preset)
    if args.trials is not None:
        trials = args.trials
    result = run_sweep(conds, trials, args.seed, preset=args.preset)
    prov = {"version": __version__, "preset": args.preset, "grid": args.grid,
            "trials": trials, "seed": args.seed,
            "conditions": [asdict(c) for c in conds]}
    _emit(args, "simulate", result.rows, COLUMNS, prov)


def cmd_verify_lower_bound(args):
    if args.trials < 0:
        raise _Usage("--trials must be non-negative")
    rows = verify_lower_bound_experiment(args.n, args.m_grid, args.trials,
                                         np.random.default_rng(args.seed), kind=args.kind)
    prov = {"version": __version__, "n": args.n, "m_grid": args.m_grid, "trials": args.trials,
            "kind": args.kind, "seed": args.seed}
    _emit(args, "verify-lower-bound", rows, LOWER_BOUND_COLUMNS, prov)


def cmd_bounds(args):
    rows = bounds_table(load_bounds_grid(args.grid))
    prov = {"version": __version__, "grid": args.grid}
    _emit(args, "bounds", rows, BOUNDS_COLUMNS, prov)


class _Usage(Exception):
    pass


COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "verify-lower-bound": cmd_verify_lower_bound,
    "bounds": cmd_bounds,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"shapedist: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ShapeDistError as exc:
        print(f"shapedist: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"shapedist: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
