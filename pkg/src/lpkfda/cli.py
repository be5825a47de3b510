"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Failures print one JSON line to stderr.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import io
from .errors import DataError, FdaError
from .estimation import estimate_covariance, estimate_mean, estimate_noise_variance
from .flm import Restriction, coefficient_bands, fit_flm
from .inference import (
    METHODS,
    MixtureNull,
    bootstrap_statistics,
    chi2_approx_params,
    covariance_eigen,
    global_test,
    prepare_test,
    simulate_mixture,
)
from .kernels import FAMILIES, SmootherSpec
from .numerics import spawn_stream
from .simulation import FIG1_MULTIPLIERS, SimConfig, run_fig1_study
from .smoothing import EvaluationGrid, default_bandwidth_candidates, reconstruct, select_bandwidth

log = logging.getLogger("lpkfda")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _interval(text):
    try:
        return io.parse_interval(text)
    except FdaError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _bandwidth(text):
    if text == "gcv":
        return text
    try:
        h = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bandwidth must be a positive number or 'gcv', got {text!r}") from None
    if not h > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return h


def _methods(text):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}")
    return methods


def _add_data_options(p, interval_help="grid interval a,b (default: data range)"):
    p.add_argument("data", help="observations CSV with header subject_id,t,y")
    p.add_argument("--kernel", choices=FAMILIES, default="gaussian")
    p.add_argument("--order", type=int, default=1, help="odd local polynomial order p")
    p.add_argument("--bandwidth", type=_bandwidth, default="gcv", help="bandwidth h or 'gcv'")
    p.add_argument("--candidates", type=int, default=30, help="number of GCV candidates")
    p.add_argument("--grid-size", type=int, default=400)
    p.add_argument("--interval", type=_interval, default=None, help=interval_help)
    p.add_argument("--min-points", type=int, default=None)
    p.add_argument("--drop-below-min", action="store_true")
    p.add_argument("--out", default=None, help="output path (default: stdout)")


def _add_test_options(p):
    p.add_argument("--covariates", required=True, help="CSV subject_id,x1..xq or subject_id,group")
    p.add_argument("--contrast", required=True, help="C as '1,-1,0' (rows split by ';') or a CSV file")
    p.add_argument("--c", dest="c_spec", default=None, help="c(t): constant 'c1,..,ck' or CSV t,c1..ck")
    p.add_argument("--methods", type=_methods, default=list(METHODS))
    p.add_argument("--B-sim", dest="B_sim", type=int, default=10000)
    p.add_argument("--B-boot", dest="B_boot", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-fraction", type=float, default=0.9999)
    p.add_argument("--m-rule", choices=("trace", "positive"), default="trace")


def build_parser():
    parser = _Parser(prog="lpkfda", description="Local polynomial smoothing and inference for functional data")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gcv", help="GCV score table and selected bandwidth")
    _add_data_options(p)

    for name, helptext in [("smooth", "reconstructed curves (long CSV)"),
                           ("mean", "mean function CSV"),
                           ("cov", "covariance matrix CSV plus eigenvalues")]:
        p = sub.add_parser(name, help=helptext)
        _add_data_options(p)
        if name == "cov":
            p.add_argument("--eigen-out", default=None)
            p.add_argument("--trace-fraction", type=float, default=0.9999)

    p = sub.add_parser("sigma2", help="noise variance function CSV")
    _add_data_options(p)
    p.add_argument("--noise-bandwidth", type=float, default=None)
    p.add_argument("--noise-kernel", choices=FAMILIES, default="gaussian")

    p = sub.add_parser("fit", help="coefficient functions and pointwise bands")
    _add_data_options(p)
    p.add_argument("--covariates", required=True)
    p.add_argument("--level", type=float, default=0.95)

    p = sub.add_parser("test", help="global test report (JSON)")
    _add_data_options(p, "test interval a,b or whole|spring|summer|autumn (default: data range)")
    _add_test_options(p)

    p = sub.add_parser("nulldist", help="null distribution draws and chi2-approximation density")
    p.add_argument("data", nargs="?", default=None)
    p.add_argument("--lambdas", type=_floats, default=None, help="mixture weights, bypassing data")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--kernel", choices=FAMILIES, default="gaussian")
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--bandwidth", type=_bandwidth, default="gcv")
    p.add_argument("--candidates", type=int, default=30)
    p.add_argument("--grid-size", type=int, default=400)
    p.add_argument("--interval", type=_interval, default=None)
    p.add_argument("--min-points", type=int, default=None)
    p.add_argument("--drop-below-min", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--covariates", default=None)
    p.add_argument("--contrast", default=None)
    p.add_argument("--c", dest="c_spec", default=None)
    p.add_argument("--methods", type=_methods, default=list(METHODS))
    p.add_argument("--B-sim", dest="B_sim", type=int, default=10000)
    p.add_argument("--B-boot", dest="B_boot", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-fraction", type=float, default=0.9999)
    p.add_argument("--m-rule", choices=("trace", "positive"), default="trace")
    p.add_argument("--density-points", type=int, default=512)

    p = sub.add_parser("simulate", help="bandwidth study on simulated data (CSV)")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--m", type=int, default=40)
    p.add_argument("--r-miss", type=float, default=0.10)
    p.add_argument("--grid-size", type=int, default=400)
    p.add_argument("--multipliers", type=_floats, default=list(FIG1_MULTIPLIERS))
    p.add_argument("--kernel", choices=FAMILIES, default="gaussian")
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    return parser


def _emit(args, text):
    if args.out:
        io.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _load(args):
    domain = None if args.command in ("test", "nulldist") else args.interval
    dataset, report = io.load_dataset(args.data, args.min_points, args.drop_below_min, domain)
    if report.dropped:
        log.info("dropped %d subjects below %s points: %s", report.n_dropped, args.min_points,
                 ",".join(report.dropped))
    return dataset, report


def _spec(args, dataset):
    if args.bandwidth == "gcv":
        cand = default_bandwidth_candidates(dataset, args.candidates)
        h = select_bandwidth(dataset, cand, args.kernel, args.order).h_star
    else:
        h = args.bandwidth
    return SmootherSpec(args.kernel, args.order, h)


def _grid(args, dataset, interval=None):
    a, b = interval or dataset.interval
    return EvaluationGrid.uniform(a, b, args.grid_size)


def _curves(args):
    dataset, _ = _load(args)
    spec = _spec(args, dataset)
    interval = args.interval if args.command in ("test", "nulldist") else None
    return dataset, reconstruct(dataset, _grid(args, dataset, interval), spec)


def cmd_gcv(args):
    dataset, _ = _load(args)
    cand = default_bandwidth_candidates(dataset, args.candidates)
    result = select_bandwidth(dataset, cand, args.kernel, args.order)
    rows = [(h, s if np.isfinite(s) else "inf", int(h == result.h_star))
            for h, s in zip(result.candidates, result.scores)]
    _emit(args, io.format_table(("h", "gcv", "selected"), rows))
    sys.stderr.write(f"h_star={result.h_star!r}\n")


def cmd_smooth(args):
    _, curves = _curves(args)
    rows = [(sid, t, v) for sid, row in zip(curves.ids, curves.curves) for t, v in zip(curves.grid.points, row)]
    _emit(args, io.format_table(("subject_id", "t", "fhat"), rows))


def cmd_mean(args):
    _, curves = _curves(args)
    mean = estimate_mean(curves)
    _emit(args, io.format_table(("t", "mean"), zip(curves.grid.points, mean.values)))


def cmd_cov(args):
    _, curves = _curves(args)
    cov = estimate_covariance(curves)
    header = ["t"] + [repr(float(t)) for t in curves.grid.points]
    rows = [[t] + list(r) for t, r in zip(curves.grid.points, cov.matrix)]
    _emit(args, io.format_table(header, rows))
    eig = covariance_eigen(cov, args.trace_fraction)
    eig_rows = [(r + 1, lam, int(r < eig.m_hat)) for r, lam in enumerate(eig.eigenvalues)]
    target = args.eigen_out or (f"{args.out}.eigen.csv" if args.out else None)
    text = io.format_table(("index", "eigenvalue", "retained"), eig_rows)
    if target:
        io.atomic_write_text(target, text)
    else:
        sys.stdout.write(text)


def cmd_sigma2(args):
    dataset, curves = _curves(args)
    est = estimate_noise_variance(dataset, curves, args.noise_bandwidth, args.noise_kernel)
    _emit(args, io.format_table(("t", "sigma2"), [(t, v if np.isfinite(v) else "") for t, v in
                                                 zip(curves.grid.points, est.values)]))


def cmd_fit(args):
    dataset, curves = _curves(args)
    design = io.load_covariates(args.covariates, dataset.ids)
    fit = fit_flm(curves, design)
    lo, hi = coefficient_bands(fit, args.level)
    header = ["t"]
    for lab in design.labels:
        header += [f"beta_{lab}", f"lower_{lab}", f"upper_{lab}"]
    rows = []
    for j, t in enumerate(curves.grid.points):
        row = [t]
        for r in range(design.q):
            row += [fit.beta[r, j], lo[r, j], hi[r, j]]
        rows.append(row)
    _emit(args, io.format_table(header, rows))


def _restriction(args, curves, q):
    C = io.load_contrast(args.contrast)
    if C.shape[1] != q:
        raise DataError(f"contrast has {C.shape[1]} columns but the design has {q}")
    c = io.load_c_function(args.c_spec, curves.grid.points, C.shape[0])
    return Restriction(C, c, curves.grid.interval)


def _config_echo(args, curves):
    return {
        "kernel": args.kernel,
        "order": args.order,
        "bandwidth": curves.spec.bandwidth,
        "bandwidth_rule": "gcv" if args.bandwidth == "gcv" else "fixed",
        "grid_size": args.grid_size,
        "contrast": args.contrast,
        "c": args.c_spec,
        "methods": list(args.methods),
        "trace_fraction": args.trace_fraction,
        "m_rule": args.m_rule,
        "data": args.data,
        "covariates": args.covariates,
        "n_subjects": curves.n,
    }


def cmd_test(args):
    dataset, curves = _curves(args)
    design = io.load_covariates(args.covariates, dataset.ids)
    restriction = _restriction(args, curves, design.q)
    report = global_test(curves, design, restriction, args.methods, args.B_sim, args.B_boot, args.seed,
                         args.trace_fraction, args.m_rule, config=_config_echo(args, curves))
    _emit(args, io.report_json(report))


def cmd_nulldist(args):
    rows = []
    if args.lambdas is not None:
        mixture = MixtureNull(np.asarray(args.lambdas), args.k)
        fit = restriction = None
    else:
        if args.data is None or args.covariates is None or args.contrast is None:
            raise UsageError("nulldist needs either --lambdas or data with --covariates and --contrast")
        dataset, curves = _curves(args)
        design = io.load_covariates(args.covariates, dataset.ids)
        restriction = _restriction(args, curves, design.q)
        _, fit, restriction = prepare_test(curves, design, restriction)
        eig = covariance_eigen(fit.gamma, args.trace_fraction, args.m_rule)
        lam = eig.retained[eig.retained > 0]
        mixture = MixtureNull(lam, restriction.k)
    draws = {}
    if "sim" in args.methods:
        draws["sim"] = simulate_mixture(mixture, args.B_sim, spawn_stream(args.seed, 1))
    if "boot" in args.methods and fit is not None:
        draws["boot"] = bootstrap_statistics(fit, restriction, args.B_boot, spawn_stream(args.seed, 2))
    if "chi2" in args.methods:
        approx = chi2_approx_params(mixture)
        k1, k2, _ = mixture.cumulants()
        upper = k1 + 8 * np.sqrt(k2)
        if draws:
            upper = max(upper, max(float(d.max()) for d in draws.values()))
        xs = np.linspace(0.0, upper, args.density_points)
        rows += [("chi2", x, d) for x, d in zip(xs, approx.pdf(xs))]
    for name, d in draws.items():
        rows += [(name, x, None) for x in d]
    _emit(args, io.format_table(("method", "x", "density"), rows))


def cmd_simulate(args):
    config = SimConfig(n=args.n, m=args.m, r_miss=args.r_miss, M=args.grid_size, seed=args.seed,
                       min_points=max(4, args.order + 2))
    study = run_fig1_study(config, args.replicates, args.multipliers, args.kernel, args.order)
    cols = ("replicate", "multiplier", "h_star", "h", "gcv", "mse_f", "mse_eta", "mse_eta_ideal")
    _emit(args, io.format_table(cols, [[r[c] for c in cols] for r in study.rows]))
    if study.dropped:
        sys.stderr.write(f"dropped_replicates={study.dropped}\n")


COMMANDS = {
    "gcv": cmd_gcv,
    "smooth": cmd_smooth,
    "mean": cmd_mean,
    "cov": cmd_cov,
    "sigma2": cmd_sigma2,
    "fit": cmd_fit,
    "test": cmd_test,
    "nulldist": cmd_nulldist,
    "simulate": cmd_simulate,
}


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": str(message)}) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(2, "UsageError", exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(2, "UsageError", exc)
    except FdaError as exc:
        return _fail(exc.exit_code, type(exc).__name__, exc)
    except OSError as exc:
        return _fail(3, type(exc).__name__, exc)
    except ValueError as exc:
        return _fail(2, "UsageError", exc)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(4, type(exc).__name__, exc)
    return 0


run_command = main


if __name__ == "__main__":
    sys.exit(main())
