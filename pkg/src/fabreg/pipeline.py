"""End-to-end adaptive analysis: fit, adapt, solve, report.

For each coefficient the prior is fit to that coefficient's adaptation data
alone (``z2``, its design and ``w_j``), so the spending function is
independent of ``(beta_hat_j, sigma2_hat)`` and the FAB interval keeps exact
``1 - alpha`` coverage whatever the estimated prior looks like.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .empirical_bayes import (MLE, MOMENT, build_marginal, mle_estimate,
                              mle_estimate_with_mean, moment_estimate)
from .errors import FabregError, InputError, OptimizerError
from .ols import (AdaptationData, Design, fast_adaptation_data, null_space_restrict,
                  standardize)
from .spending import (DEFAULT_TOL, FAB_T, SpendingSpec, fab_interval_t, umau_interval)

ZERO = "ZERO"
ESTIMATED = "ESTIMATED"

SCHEMA = "fabreg/1"
EMPTY_CONTEXT = "empty_context"
MEAN_FALLBACK = "mean_fallback"

CSV_FIELDS = ("name", "estimate", "w", "umau_lo", "umau_hi", "fab_lo", "fab_hi",
              "rel_width", "tau2", "mu", "sigma2", "group", "flags")


def _normalize_groups(groups):
    if groups is None:
        return None
    items = groups.items() if isinstance(groups, dict) else (
        (f"g{k + 1}", cols) for k, cols in enumerate(groups))
    out = []
    for label, cols in items:
        if isinstance(cols, (str, int)):
            cols = (cols,)
        cols = tuple(cols)
        if not cols:
            raise InputError(f"group {label!r} is empty")
        out.append((str(label), cols))
    if not out:
        raise InputError("groups must contain at least one group")
    return tuple(out)


@dataclass(frozen=True)
class AnalysisConfig:
    alpha: float = 0.05
    prior_mean_mode: str = ZERO
    estimator: str = MLE
    groups: tuple = None
    standardize: bool = False
    seed: int = 0
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        alpha = float(self.alpha)
        if not 0.0 < alpha < 0.5:
            raise InputError(f"alpha must lie in (0, 0.5), got {self.alpha!r}")
        object.__setattr__(self, "alpha", alpha)
        mode = str(self.prior_mean_mode).upper()
        if mode not in (ZERO, ESTIMATED):
            raise InputError(f"prior_mean_mode must be ZERO or ESTIMATED, got {self.prior_mean_mode!r}")
        est = str(self.estimator).upper()
        if est not in (MLE, MOMENT):
            raise InputError(f"estimator must be MLE or MOMENT, got {self.estimator!r}")
        if mode == ESTIMATED and est == MOMENT:
            raise InputError("an estimated prior mean requires the MLE estimator")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise InputError(f"tol must be positive, got {self.tol!r}")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InputError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        object.__setattr__(self, "prior_mean_mode", mode)
        object.__setattr__(self, "estimator", est)
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "groups", _normalize_groups(self.groups))

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "prior_mean_mode": self.prior_mean_mode,
            "estimator": self.estimator,
            "groups": None if self.groups is None else {k: list(v) for k, v in self.groups},
            "standardize": self.standardize,
            "seed": self.seed,
            "tol": self.tol,
        }


def build_spec(ad, cfg):
    """Fit the prior to one coefficient's adaptation data.

    Returns ``(spec, prior, flags)``; ``spec`` is ``None`` when there is
    nothing to adapt to.  Only :class:`~fabreg.ols.AdaptationData` is
    accepted, which carries no trace of ``beta_hat_j`` or ``sigma2_hat``.
    """
    if not isinstance(ad, AdaptationData):
        raise TypeError(f"build_spec takes AdaptationData, got {type(ad).__name__}")
    if ad.empty:
        return None, None, frozenset({EMPTY_CONTEXT})
    flags = set()
    with_mean = cfg.prior_mean_mode == ESTIMATED
    mm = build_marginal(ad, with_mean)
    if cfg.estimator == MOMENT:
        prior = moment_estimate(mm)
    elif with_mean:
        try:
            prior = mle_estimate_with_mean(mm)
        except OptimizerError:
            prior = mle_estimate(mm)
            flags.add(MEAN_FALLBACK)
    else:
        prior = mle_estimate(mm)
    flags |= prior.flags
    spec = SpendingSpec(prior.mu, prior.tau2, math.sqrt(prior.sigma2), ad.w_j, cfg.alpha)
    return spec, prior, frozenset(flags)


@dataclass(frozen=True)
class CoefficientRecord:
    name: str
    index: int
    beta_hat: float
    w: float
    umau: object
    fab: object
    prior: object = None
    flags: frozenset = frozenset()
    group: str = None

    @property
    def relative_width(self):
        return self.fab.width / self.umau.width

    @property
    def significant_umau(self):
        return self.umau.excludes_zero()

    @property
    def significant_fab(self):
        return self.fab.excludes_zero()

    def to_dict(self):
        def interval(r):
            return {"lower": r.lower, "upper": r.upper, "width": r.width, "method": r.method,
                    "solver_iters": r.solver_iters, "residual": r.residual}
        prior = None
        if self.prior is not None:
            p = self.prior
            prior = {"mu": p.mu, "tau2": p.tau2, "sigma2": p.sigma2, "method": p.method,
                     "objective": p.objective, "flags": sorted(p.flags),
                     "box": {"tau2": [0.0, p.box.tau2_max],
                             "sigma2": [p.box.sigma2_min, p.box.sigma2_max]}}
        return {
            "name": self.name, "index": self.index, "group": self.group,
            "beta_hat": self.beta_hat, "w": self.w,
            "umau": interval(self.umau), "fab": interval(self.fab), "prior": prior,
            "relative_width": self.relative_width,
            "significant_umau": self.significant_umau, "significant_fab": self.significant_fab,
            "flags": sorted(self.flags),
        }


def _g17(x):
    return "" if x is None else format(float(x), ".17g")


@dataclass(frozen=True)
class AnalysisReport:
    records: tuple
    sigma2_hat: float
    df: int
    n: int
    p: int
    config: AnalysisConfig
    standardized: bool = False
    group_priors: dict = field(default=None)

    def record(self, name):
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def mean_relative_width(self):
        return float(np.mean([r.relative_width for r in self.records]))

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "n": self.n, "p": self.p, "df": self.df, "sigma2_hat": self.sigma2_hat,
            "standardized": self.standardized,
            "config": self.config.to_dict(),
            "mean_relative_width": self.mean_relative_width,
            "coefficients": [r.to_dict() for r in self.records],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def csv_rows(self):
        for r in self.records:
            pr = r.prior
            yield {
                "name": r.name, "estimate": _g17(r.beta_hat), "w": _g17(r.w),
                "umau_lo": _g17(r.umau.lower), "umau_hi": _g17(r.umau.upper),
                "fab_lo": _g17(r.fab.lower), "fab_hi": _g17(r.fab.upper),
                "rel_width": f"{r.relative_width:.4f}",
                "tau2": _g17(pr.tau2) if pr else "", "mu": _g17(pr.mu) if pr else "",
                "sigma2": _g17(pr.sigma2) if pr else "",
                "group": r.group or "", "flags": ";".join(sorted(r.flags)),
            }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.csv_rows())
        return buf.getvalue()


def _annotate(err, name):
    err.coefficient = name
    err.args = (f"coefficient {name!r}: {err.args[0] if err.args else err}",) + tuple(err.args[1:])
    return err


class Analyzer:
    """Per-design analysis reused across responses."""

    def __init__(self, design, cfg):
        self.design = design
        self.cfg = cfg

    def coefficient(self, fit, j, group=None):
        name = self.design.names[j]
        cfg = self.cfg
        try:
            bh, w = float(fit.beta_hat[j]), float(fit.w[j])
            sigma_hat = math.sqrt(fit.sigma2_hat)
            umau = umau_interval(bh, w, sigma_hat, fit.df, cfg.alpha)
            spec, prior, flags = build_spec(fast_adaptation_data(fit, j), cfg)
            if spec is None:
                fab = umau
            else:
                fab = fab_interval_t(bh, sigma_hat, fit.df, spec, cfg.tol)
        except FabregError as e:
            raise _annotate(e, name)
        return CoefficientRecord(name, j, bh, w, umau, fab, prior, flags, group)

    def run(self, y, group=None):
        fit = self.design.fit(y)
        # residual at roundoff level means an exact fit
        if not fit.sigma2_hat * fit.df > (1e-12 * float(np.linalg.norm(y))) ** 2:
            raise InputError("residual variance is zero; the model fits the data exactly")
        records = tuple(self.coefficient(fit, j, group) for j in range(self.design.p))
        return fit, records


def _prepare(data, cfg):
    if cfg.standardize and not data.standardize:
        data = standardize(data)
    return data


def analyze(data, cfg=None):
    """UMAU and adaptive FAB intervals for every coefficient of ``data``."""
    cfg = cfg or AnalysisConfig()
    if cfg.groups is not None:
        return analyze_grouped(data, cfg)
    data = _prepare(data, cfg)
    fit, records = Analyzer(Design(data.X, data.names), cfg).run(data.y)
    return AnalysisReport(records, fit.sigma2_hat, fit.df, data.n, data.p, cfg, data.standardize)


def analyze_grouped(data, cfg):
    """Adapt separately within each column group.

    The other groups are projected out with :func:`~fabreg.ols.null_space_restrict`
    and each group's prior is fit only to that group's coefficients.
    """
    if cfg.groups is None:
        raise InputError("analyze_grouped needs cfg.groups")
    data = _prepare(data, cfg)
    seen = {}
    for label, cols in cfg.groups:
        for k in data.column_indices(cols):
            if k in seen:
                raise InputError(f"column {data.names[k]!r} is in groups {seen[k]!r} and {label!r}")
            seen[k] = label
    missing = [data.names[k] for k in range(data.p) if k not in seen]
    if missing:
        raise InputError(f"groups do not cover columns: {', '.join(missing)}")
    full = Design(data.X, data.names).fit(data.y)
    by_index = {}
    priors = {}
    for label, cols in cfg.groups:
        idx = data.column_indices(cols)
        sub = null_space_restrict(data, idx)
        _, records = Analyzer(Design(sub.X, sub.names), cfg).run(sub.y, label)
        for k, rec in zip(idx, records):
            by_index[k] = CoefficientRecord(rec.name, k, rec.beta_hat, rec.w, rec.umau, rec.fab,
                                            rec.prior, rec.flags, label)
        priors[label] = [r.prior for r in records]
    records = tuple(by_index[k] for k in range(data.p))
    return AnalysisReport(records, full.sigma2_hat, full.df, data.n, data.p, cfg,
                          data.standardize, priors)
