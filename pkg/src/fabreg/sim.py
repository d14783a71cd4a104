"""Monte Carlo studies of coverage and width.

``run_study`` freezes a design, draws ``y = X beta0 + sigma0 eps`` once per
replicate from its own seeded substream and tallies, per coefficient and
method, how often the interval contains the truth.  Replicates are
independent, so results do not depend on the thread count.

``width_convergence_study`` compares the adaptive interval with the oracle
interval (known prior and variance) as ``n`` grows with ``p / n`` fixed.
"""

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dist import binomial_acceptance_band, clopper_pearson, make_rng
from .empirical_bayes import MLE
from .errors import FabregError, InputError
from .ols import Design
from .pipeline import SCHEMA, ZERO, AnalysisConfig, Analyzer
from .spending import (FAB_T, FAB_Z_ORACLE, UMAU, SpendingSpec, fab_interval_z,
                       umau_interval)

METHODS = (UMAU, FAB_T, FAB_Z_ORACLE)


def gaussian_design(rng, n, p, rho=0.0):
    """Standard normal rows with equicorrelation ``rho`` between columns."""
    Z = rng.standard_normal((n, p))
    if rho:
        Z = math.sqrt(1.0 - rho) * Z + math.sqrt(rho) * rng.standard_normal((n, 1))
    return Z


def uniform_design(rng, n, p):
    return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), (n, p))


DESIGN_LAWS = {"gaussian": gaussian_design, "uniform": uniform_design}


@dataclass(frozen=True)
class SimDesign:
    X: np.ndarray
    beta0: np.ndarray
    sigma2_0: float
    reps: int
    alpha: float = 0.05
    methods: tuple = (UMAU, FAB_T)
    seed: int = 0
    estimator: str = MLE
    prior_mean_mode: str = ZERO
    names: tuple = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        b = np.array(self.beta0, dtype=float).ravel()
        if X.ndim != 2 or X.shape[1] != b.shape[0]:
            raise InputError(f"beta0 has {b.shape[0]} entries for a design of shape {X.shape}")
        if not (self.sigma2_0 > 0 and math.isfinite(self.sigma2_0)):
            raise InputError(f"sigma2_0 must be positive, got {self.sigma2_0!r}")
        if isinstance(self.reps, bool) or int(self.reps) != self.reps or self.reps < 1:
            raise InputError(f"reps must be a positive integer, got {self.reps!r}")
        methods = tuple(str(m).upper() for m in self.methods)
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise InputError(f"methods must be a nonempty subset of {METHODS}, got {self.methods!r}")
        methods = tuple(m for m in METHODS if m in methods)
        names = self.names or tuple(f"x{k + 1}" for k in range(X.shape[1]))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "beta0", b)
        object.__setattr__(self, "reps", int(self.reps))
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "names", tuple(names))
        # validates alpha, estimator, mode and seed
        object.__setattr__(self, "_cfg", AnalysisConfig(
            alpha=self.alpha, estimator=self.estimator, prior_mean_mode=self.prior_mean_mode,
            seed=self.seed))

    @property
    def config(self):
        return self._cfg

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def to_dict(self):
        return {"n": self.n, "p": self.p, "sigma2_0": self.sigma2_0, "reps": self.reps,
                "alpha": self.alpha, "methods": list(self.methods), "seed": self.seed,
                "estimator": self._cfg.estimator, "prior_mean_mode": self._cfg.prior_mean_mode}


@dataclass(frozen=True)
class CoverageRow:
    name: str
    method: str
    hits: int
    reps: int
    mean_width: float
    cp_level: float = 0.95

    @property
    def coverage(self):
        return self.hits / self.reps if self.reps else float("nan")

    @property
    def cp_interval(self):
        if not self.reps:
            return (0.0, 1.0)
        return clopper_pearson(self.hits, self.reps, self.cp_level)

    def to_dict(self):
        lo, hi = self.cp_interval
        return {"name": self.name, "method": self.method, "hits": self.hits, "reps": self.reps,
                "coverage": self.coverage, "cp_low": lo, "cp_high": hi,
                "mean_width": self.mean_width}


@dataclass(frozen=True)
class CoverageReport:
    rows: tuple
    design: dict
    exclusions: tuple = ()
    max_residual: float = 0.0

    def rows_for(self, method):
        return [r for r in self.rows if r.method == method]

    def mean_relative_width(self, method, baseline=UMAU):
        num = {r.name: r.mean_width for r in self.rows_for(method)}
        den = {r.name: r.mean_width for r in self.rows_for(baseline)}
        if not num or not den:
            return None
        return float(np.mean([num[k] / den[k] for k in num]))

    def in_band(self, method, level=0.99):
        """Coefficients whose hit count is not rejected by the exact binomial
        test of coverage ``1 - alpha`` at significance ``1 - level``."""
        rows = self.rows_for(method)
        if not rows:
            return 0, 0
        lo, hi = binomial_acceptance_band(rows[0].reps, 1.0 - self.design["alpha"], level)
        return sum(lo <= r.hits <= hi for r in rows), len(rows)

    def summary(self):
        methods = self.design["methods"]
        out = {}
        for m in methods:
            if m != UMAU and UMAU in methods:
                out[f"mean_relative_width_{m}"] = self.mean_relative_width(m)
        return out

    def to_dict(self):
        return {"schema": SCHEMA, "design": self.design,
                "rows": [r.to_dict() for r in self.rows], "summary": self.summary(),
                "exclusions": [{"rep": k, "error": e} for k, e in self.exclusions],
                "excluded_reps": len(self.exclusions), "max_residual": self.max_residual}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        fields = ("name", "method", "hits", "reps", "coverage", "cp_low", "cp_high", "mean_width")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for r in self.rows:
            d = r.to_dict()
            w.writerow([d["name"], d["method"], d["hits"], d["reps"]]
                       + [format(d[k], ".17g") for k in fields[4:]])
        return buf.getvalue()


class _Runner:
    def __init__(self, design):
        self.sd = design
        self.design = Design(design.X, design.names)
        self.analyzer = Analyzer(self.design, design.config)
        self.mean = design.X @ design.beta0
        self.sigma0 = math.sqrt(design.sigma2_0)
        self.oracle = None
        if FAB_Z_ORACLE in design.methods:
            tau2 = float(np.mean(design.beta0 ** 2))
            self.oracle = [SpendingSpec(0.0, tau2, self.sigma0, float(w), design.alpha)
                           for w in self.design.w]

    def rep(self, k):
        """Return ``(hits, widths, residual)`` arrays of shape (p, methods)."""
        sd = self.sd
        rng = make_rng(sd.seed, k)
        y = self.mean + self.sigma0 * rng.standard_normal(sd.n)
        fit = self.design.fit(y)
        p, M = sd.p, len(sd.methods)
        hits = np.zeros((p, M), dtype=np.int64)
        widths = np.zeros((p, M))
        res = 0.0
        sigma_hat = math.sqrt(fit.sigma2_hat)
        for j in range(p):
            bh = float(fit.beta_hat[j])
            for mi, m in enumerate(sd.methods):
                if m == UMAU:
                    iv = umau_interval(bh, float(fit.w[j]), sigma_hat, fit.df, sd.alpha)
                elif m == FAB_T:
                    iv = self.analyzer.coefficient(fit, j).fab
                else:
                    iv = fab_interval_z(bh, self.oracle[j])
                hits[j, mi] = iv.contains(sd.beta0[j])
                widths[j, mi] = iv.width
                res = max(res, iv.residual)
        return hits, widths, res


def run_study(design, threads=1):
    """Coverage and mean width per coefficient and method."""
    runner = _Runner(design)
    reps = design.reps

    def one(k):
        try:
            return k, runner.rep(k), None
        except (FabregError, ArithmeticError) as e:
            return k, None, f"{type(e).__name__}: {e}"

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            results = list(ex.map(one, range(reps)))
    else:
        results = [one(k) for k in range(reps)]
    p, M = design.p, len(design.methods)
    hits = np.zeros((p, M), dtype=np.int64)
    wsum = np.zeros((p, M))
    used = 0
    max_res = 0.0
    exclusions = []
    for k, out, err in results:
        if out is None:
            exclusions.append((k, err))
            continue
        h, w, r = out
        hits += h
        wsum += w
        used += 1
        max_res = max(max_res, r)
    rows = []
    for j, name in enumerate(design.names):
        for mi, m in enumerate(design.methods):
            mw = wsum[j, mi] / used if used else float("nan")
            rows.append(CoverageRow(name, m, int(hits[j, mi]), used, float(mw)))
    return CoverageReport(tuple(rows), design.to_dict(), tuple(exclusions), float(max_res))


@dataclass(frozen=True)
class TrendRow:
    n: int
    p: int
    sigma2: float
    mean_fab: float
    mean_oracle: float
    mean_umau: float
    gap: float
    gap_se: float
    reps: int
    excluded: int = 0


@dataclass(frozen=True)
class TrendTable:
    rows: tuple
    settings: dict = field(default_factory=dict)

    def gaps(self):
        return [r.gap for r in self.rows]

    def to_dict(self):
        return {"schema": SCHEMA, "settings": self.settings,
                "rows": [r.__dict__.copy() for r in self.rows]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        fields = ("n", "p", "sigma2", "mean_fab", "mean_oracle", "mean_umau", "gap", "gap_se",
                  "reps", "excluded")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for r in self.rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v
                        for v in (getattr(r, f) for f in fields)])
        return buf.getvalue()


def width_convergence_study(spectrum_law="gaussian", tau2=1.0, sigma2_inf=1.0,
                            n_grid=(50, 100, 200, 400), c=0.25, reps=500, seed=0,
                            alpha=0.05, estimator=MLE):
    """Mean adaptive, oracle and UMAU widths as ``n`` grows.

    For each ``n``: ``p = ceil(c n)``, ``sigma2 = n sigma2_inf``, a design
    drawn once from ``spectrum_law`` and frozen, and per replicate
    ``beta ~ N(0, tau2 I)``, ``y ~ N(X beta, sigma2 I)``.  ``gap`` is the mean
    adaptive width minus the mean oracle width, averaged over coefficients.
    """
    if not 0.0 < c < 1.0:
        raise InputError(f"c must lie in (0, 1), got {c!r}")
    if not tau2 >= 0 or not sigma2_inf > 0:
        raise InputError("need tau2 >= 0 and sigma2_inf > 0")
    law = DESIGN_LAWS.get(spectrum_law) if isinstance(spectrum_law, str) else spectrum_law
    if law is None:
        raise InputError(f"unknown spectrum law {spectrum_law!r}; choose from {sorted(DESIGN_LAWS)}")
    cfg = AnalysisConfig(alpha=alpha, estimator=estimator, seed=seed)
    rows = []
    for gi, n in enumerate(n_grid):
        n = int(n)
        p = int(math.ceil(c * n))
        if n - p < 2:
            raise InputError(f"n = {n} leaves too few residual degrees of freedom")
        sigma2 = n * sigma2_inf
        X = law(make_rng(seed, gi, 0), n, p)
        design = Design(X)
        an = Analyzer(design, cfg)
        sigma = math.sqrt(sigma2)
        oracle = [SpendingSpec(0.0, tau2, sigma, float(w), alpha) for w in design.w]
        diffs = []
        fab_w, or_w, um_w = [], [], []
        excluded = 0
        for k in range(int(reps)):
            rng = make_rng(seed, gi, k + 1)
            beta = math.sqrt(tau2) * rng.standard_normal(p)
            y = X @ beta + sigma * rng.standard_normal(n)
            try:
                fit, recs = an.run(y)
                o = np.mean([fab_interval_z(float(fit.beta_hat[j]), oracle[j]).width
                             for j in range(p)])
            except (FabregError, ArithmeticError):
                excluded += 1
                continue
            f = np.mean([r.fab.width for r in recs])
            u = np.mean([r.umau.width for r in recs])
            fab_w.append(f)
            or_w.append(o)
            um_w.append(u)
            diffs.append(f - o)
        diffs = np.asarray(diffs)
        kept = diffs.size
        rows.append(TrendRow(n, p, float(sigma2), float(np.mean(fab_w)), float(np.mean(or_w)),
                             float(np.mean(um_w)), float(diffs.mean()),
                             float(diffs.std(ddof=1) / math.sqrt(kept)) if kept > 1 else float("nan"),
                             kept, excluded))
    settings = {"spectrum_law": spectrum_law if isinstance(spectrum_law, str) else "custom",
                "tau2": tau2, "sigma2_inf": sigma2_inf, "n_grid": [int(v) for v in n_grid],
                "c": c, "reps": int(reps), "seed": seed, "alpha": alpha, "estimator": estimator}
    return TrendTable(tuple(rows), settings)
