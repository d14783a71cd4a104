"""Command-line interface.

    fabreg fit          --data d.csv --response y --out report
    fabreg fit-grouped  --data d.csv --response y --group main=a,b --group int=c,d
    fabreg simulate     --n 100 --p 20 --beta0 zero --reps 2000 --seed 7 --out cov
    fabreg trend        --c 0.25 --n-grid 50,100,200,400 --reps 500 --out trend

Exit codes: 0 success, 2 invalid input, 3 numerical failure.  Errors are
written to stderr as a single JSON line ``{"error": kind, "flag": ..., "message": ...}``.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .dist import make_rng
from .errors import (ConvergenceError, DomainError, EmptyContextError, InputError,
                     OptimizerError, SingularMomentSystemError)
from .ols import RegressionData
from .pipeline import ESTIMATED, ZERO, AnalysisConfig, analyze, analyze_grouped
from .sim import (DESIGN_LAWS, METHODS, SimDesign, gaussian_design, run_study,
                  width_convergence_study)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

DESIGN_STREAM = 2**32


class UsageError(Exception):
    def __init__(self, message, flag=None):
        super().__init__(message)
        self.flag = flag


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind, message, flag=None):
    line = json.dumps({"error": kind, "flag": flag, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return EXIT_INPUT if kind == "input" else EXIT_NUMERIC


def read_csv(path, response):
    """Read a headed numeric CSV; return ``(y, X, predictor names)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}", "--data")
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise UsageError(f"{path} needs a header row and at least one data row", "--data")
    header = [h.strip() for h in rows[0]]
    if response not in header:
        raise UsageError(f"response column {response!r} not in header of {path}", "--response")
    body = np.empty((len(rows) - 1, len(header)))
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise UsageError(f"{path} line {i}: expected {len(header)} fields, got {len(r)}", "--data")
        for k, cell in enumerate(r):
            try:
                v = float(cell)
            except ValueError:
                raise UsageError(f"{path} line {i}: cannot parse {cell!r} as a number", "--data")
            if not math.isfinite(v):
                raise UsageError(f"{path} line {i}: non-finite value {cell!r}", "--data")
            body[i - 2, k] = v
    ky = header.index(response)
    keep = [k for k in range(len(header)) if k != ky]
    return body[:, ky], body[:, keep], tuple(header[k] for k in keep)


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FABREG_SEED")
    if env is None:
        return 0
    try:
        s = int(env)
    except ValueError:
        raise UsageError(f"FABREG_SEED must be an integer, got {env!r}", "FABREG_SEED")
    return s


def _check_out(prefix, data):
    if data and any(os.path.abspath(f"{prefix}.{ext}") == os.path.abspath(data)
                    for ext in ("csv", "json")):
        raise UsageError(f"--out {prefix!r} would overwrite the input file {data}", "--out")


def _write(prefix, csv_text, json_text):
    for ext, text in (("csv", csv_text), ("json", json_text)):
        path = f"{prefix}.{ext}"
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as e:
            raise UsageError(f"cannot write {path}: {e.strerror}", "--out")


def _config(args, groups=None):
    if not 0.0 < args.alpha < 0.5:
        raise UsageError(f"--alpha must lie in (0, 0.5), got {args.alpha:g}", "--alpha")
    return AnalysisConfig(alpha=args.alpha,
                          prior_mean_mode=ESTIMATED if args.prior_mean == "estimate" else ZERO,
                          estimator=args.estimator.upper(), groups=groups,
                          standardize=args.standardize, seed=_seed(args), tol=args.tol)


def _parse_groups(specs):
    groups = {}
    for spec in specs or ():
        label, sep, cols = spec.partition("=")
        if not sep or not label or not cols:
            raise UsageError(f"--group expects NAME=col1,col2,..., got {spec!r}", "--group")
        if label in groups:
            raise UsageError(f"group {label!r} given twice", "--group")
        groups[label] = tuple(c.strip() for c in cols.split(",") if c.strip())
    if not groups:
        raise UsageError("fit-grouped needs at least one --group", "--group")
    return groups


def cmd_fit(args, grouped=False):
    groups = _parse_groups(args.group) if grouped else None
    cfg = _config(args, groups)
    _check_out(args.out, args.data)
    y, X, names = read_csv(args.data, args.response)
    data = RegressionData(y, X, names)
    report = analyze_grouped(data, cfg) if grouped else analyze(data, cfg)
    _write(args.out, report.to_csv(), report.to_json())
    return EXIT_OK


def _read_beta0(spec, p, names):
    if spec == "zero":
        return np.zeros(p)
    try:
        with open(spec, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as e:
        raise UsageError(f"cannot read {spec}: {e.strerror}", "--beta0")
    values = {}
    plain = []
    for r in rows:
        cells = [c.strip() for c in r]
        try:
            nums = [float(c) for c in cells]
        except ValueError:
            nums = None
        if nums is not None:
            plain.extend(nums)
            continue
        if len(cells) == 2 and cells[0] in names:
            try:
                values[cells[0]] = float(cells[1])
            except ValueError:
                raise UsageError(f"{spec}: cannot parse {cells[1]!r}", "--beta0")
        elif cells[0].lower() not in ("name", "beta0"):
            raise UsageError(f"{spec}: unrecognised row {r!r}", "--beta0")
    if values:
        missing = [n for n in names if n not in values]
        if missing:
            raise UsageError(f"{spec}: no value for {', '.join(missing)}", "--beta0")
        beta = np.array([values[n] for n in names])
    else:
        beta = np.array(plain)
    if beta.shape[0] != p:
        raise UsageError(f"{spec}: {beta.shape[0]} values for {p} coefficients", "--beta0")
    if not np.all(np.isfinite(beta)):
        raise UsageError(f"{spec}: non-finite coefficient", "--beta0")
    return beta


def cmd_simulate(args):
    seed = _seed(args)
    if not 0.0 < args.alpha < 0.5:
        raise UsageError(f"--alpha must lie in (0, 0.5), got {args.alpha:g}", "--alpha")
    methods = tuple(m.strip().upper() for m in args.methods.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"--methods takes a comma list from {','.join(METHODS).lower()}", "--methods")
    if args.data:
        _check_out(args.out, args.data)
        if not args.response:
            raise UsageError("--data needs --response naming the column to drop", "--response")
        _, X, names = read_csv(args.data, args.response)
    else:
        if args.n is None or args.p is None:
            raise UsageError("give --n and --p, or --data", "--n")
        if not 1 <= args.p < args.n:
            raise UsageError(f"need 1 <= p < n, got n={args.n}, p={args.p}", "--p")
        if not -1.0 / max(args.p - 1, 1) < args.rho < 1.0:
            raise UsageError(f"--rho out of range: {args.rho}", "--rho")
        X = gaussian_design(make_rng(seed, DESIGN_STREAM), args.n, args.p, args.rho)
        names = tuple(f"x{k + 1}" for k in range(args.p))
    if not args.sigma2 > 0:
        raise UsageError("--sigma2 must be positive", "--sigma2")
    if args.reps < 1:
        raise UsageError("--reps must be at least 1", "--reps")
    beta0 = _read_beta0(args.beta0, X.shape[1], names)
    design = SimDesign(X, beta0, args.sigma2, args.reps, args.alpha, methods, seed,
                       args.estimator.upper(), names=names)
    report = run_study(design, threads=args.threads)
    _write(args.out, report.to_csv(), report.to_json())
    return EXIT_OK


def cmd_trend(args):
    try:
        grid = [int(v) for v in args.n_grid.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--n-grid must be a comma list of integers, got {args.n_grid!r}", "--n-grid")
    if not grid:
        raise UsageError("--n-grid is empty", "--n-grid")
    if not 0.0 < args.c < 1.0:
        raise UsageError(f"--c must lie in (0, 1), got {args.c}", "--c")
    if not 0.0 < args.alpha < 0.5:
        raise UsageError(f"--alpha must lie in (0, 0.5), got {args.alpha:g}", "--alpha")
    table = width_convergence_study(args.law, args.tau2, args.sigma2_inf, grid, args.c,
                                    args.reps, _seed(args), args.alpha, args.estimator.upper())
    _write(args.out, table.to_csv(), table.to_json())
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="fabreg", description=(
        "Constant-coverage adaptive confidence intervals for linear regression coefficients."))
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--alpha", type=float, default=0.05,
                       help="error rate, in (0, 0.5) (default 0.05)")
        p.add_argument("--estimator", choices=("mle", "moment"), default="mle",
                       help="prior estimator (default mle)")
        p.add_argument("--seed", type=int, default=None,
                       help="64-bit seed (default: $FABREG_SEED, else 0)")
        p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
        p.add_argument("--out", default="fabreg", help="output prefix for .csv and .json")

    for name, help_ in (("fit", "intervals for every coefficient of a CSV dataset"),
                        ("fit-grouped", "intervals adapted separately within column groups")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--data", required=True, help="comma-separated file with a header row")
        p.add_argument("--response", required=True, help="name of the response column")
        p.add_argument("--prior-mean", choices=("zero", "estimate"), default="zero",
                       help="prior centre: fixed at zero or estimated (default zero)")
        p.add_argument("--standardize", action="store_true",
                       help="centre and scale columns; report on the standardized scale")
        p.add_argument("--tol", type=float, default=1e-9, help="endpoint residual tolerance")
        if name == "fit-grouped":
            p.add_argument("--group", action="append", metavar="NAME=COL,COL",
                           help="column group; repeat to cover every predictor")
        common(p)

    p = sub.add_parser("simulate", help="Monte Carlo coverage study on a frozen design")
    p.add_argument("--n", type=int, help="rows of a generated Gaussian design")
    p.add_argument("--p", type=int, help="columns of a generated Gaussian design")
    p.add_argument("--rho", type=float, default=0.0, help="equicorrelation of generated columns")
    p.add_argument("--data", help="CSV whose predictor columns form the design")
    p.add_argument("--response", help="column of --data to exclude from the design")
    p.add_argument("--beta0", default="zero", help="'zero' or a file of true coefficients")
    p.add_argument("--sigma2", type=float, default=1.0, help="true noise variance (default 1)")
    p.add_argument("--reps", type=int, default=1000, help="replicates (default 1000)")
    p.add_argument("--methods", default="umau,fab_t",
                   help="comma list from umau,fab_t,fab_z_oracle (default umau,fab_t)")
    common(p)

    p = sub.add_parser("trend", help="adaptive vs oracle width as n grows with p/n fixed")
    p.add_argument("--law", choices=sorted(DESIGN_LAWS), default="gaussian",
                   help="distribution of design entries")
    p.add_argument("--tau2", type=float, default=1.0, help="prior variance of coefficients")
    p.add_argument("--sigma2-inf", type=float, default=1.0, help="noise variance per row, sigma2 / n")
    p.add_argument("--n-grid", default="50,100,200,400", help="comma list of sample sizes")
    p.add_argument("--c", type=float, default=0.25, help="ratio p / n in (0, 1)")
    p.add_argument("--reps", type=int, default=500, help="replicates per n")
    common(p)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1", "--threads")
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "fit-grouped":
            return cmd_fit(args, grouped=True)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_trend(args)
    except UsageError as e:
        return _fail("input", e, e.flag)
    except (InputError, DomainError) as e:
        return _fail("input", e)
    except (ConvergenceError, OptimizerError, SingularMomentSystemError, EmptyContextError,
            ArithmeticError, np.linalg.LinAlgError) as e:
        return _fail("numeric", e)


if __name__ == "__main__":
    sys.exit(main())
