"""Spending functions and the UMAU / FAB interval constructions.

A spending function ``s`` splits the error rate ``alpha`` between the two
tails of the acceptance region for each candidate ``theta``.  Inverting the
regions gives

    C_s = {theta : b + r t_{alpha (1 - s(theta))} < theta < b + r t_{1 - alpha s(theta)}},

with ``b`` the estimate and ``r = w sigma_hat`` its scale.  For the normal
prior ``N(mu, tau2)`` the Bayes-optimal choice is

    s(theta) = g^-1(2 w sigma (theta - mu) / tau2),
    g(s) = Phi^-1(alpha s) - Phi^-1(alpha (1 - s)),

and when ``s`` is nondecreasing the region is an interval whose endpoints
solve ``F((lo - b)/r) = alpha (1 - s(lo))`` and ``F((b - hi)/r) = alpha s(hi)``.

Intervals are reported as open sets; :meth:`IntervalResult.contains` uses
the half-open convention ``lower <= theta < upper``.  The two differ only on
a null set, except at ``tau2 = 0`` where ``mu`` itself can be an endpoint.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .dist import t_quantile
from .errors import ConvergenceError, DomainError

UMAU = "UMAU"
FAB_T = "FAB_T"
FAB_Z_ORACLE = "FAB_Z_ORACLE"

DEFAULT_TOL = 1e-9
DEFAULT_MAXITER = 200

_STATUS = {
    1: "maximum iterations reached",
    2: "initial bracket does not straddle a root",
    3: "bracket collapsed with residual above tolerance",
    4: "non-finite residual",
}


def _check_alpha(alpha, upper=0.5):
    alpha = float(alpha)
    if not 0.0 < alpha < upper:
        raise DomainError(f"alpha must lie in (0, {upper:g}), got {alpha!r}")
    return alpha


@dataclass(frozen=True)
class SpendingSpec:
    """Prior-derived spending function ``g^-1(2 w sigma (theta - mu) / tau2)``.

    ``sigma`` is the scale used for adaptation; it is not the sigma_hat that
    scales the interval.
    """

    mu: float
    tau2: float
    sigma: float
    w: float
    alpha: float = 0.05

    def __post_init__(self):
        for name in ("mu", "tau2", "sigma", "w"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.tau2 < 0:
            raise DomainError(f"tau2 must be nonnegative, got {self.tau2!r}")
        if not (self.sigma > 0 and self.w > 0):
            raise DomainError("sigma and w must be positive")
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))

    @property
    def scale(self):
        return self.w * self.sigma

    @property
    def is_step(self):
        """True when tau2 is small enough to use the step spending function."""
        return self.tau2 <= kernels.STEP_TAU2_RATIO * self.scale ** 2


@dataclass(frozen=True)
class IntervalResult:
    lower: float
    upper: float
    method: str
    solver_iters: int = 0
    residual: float = 0.0
    residual_lower: float = field(default=0.0, repr=False)
    residual_upper: float = field(default=0.0, repr=False)

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, theta):
        return self.lower <= theta < self.upper

    def excludes_zero(self):
        return not (self.lower < 0.0 < self.upper)


def g(s, alpha):
    """``Phi^-1(alpha s) - Phi^-1(alpha (1 - s))``; signed infinity at s in {0, 1}."""
    alpha = _check_alpha(alpha)
    s = float(s)
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s must lie in [0, 1], got {s!r}")
    return kernels.fab_g(s, alpha)


_S_MIN = math.ulp(0.0)
_S_MAX = math.nextafter(1.0, 0.0)


def g_inverse(x, alpha):
    """The ``s`` in (0, 1) with ``g(s) = x``.

    Past roughly ``|x| > 35`` the exact value rounds to 0 or 1 in double
    precision; it is kept inside the open interval at the nearest
    representable point.
    """
    s = kernels.fab_ginv(float(x), _check_alpha(alpha))[0]
    return min(max(s, _S_MIN), _S_MAX)


def spending(spec, beta):
    """Evaluate the spending function of ``spec`` at ``beta``."""
    beta = float(beta)
    if spec.is_step:
        if beta > spec.mu:
            return 1.0
        if beta < spec.mu:
            return 0.0
        return 0.5
    return kernels.fab_ginv(2.0 * spec.scale * (beta - spec.mu) / spec.tau2, spec.alpha)[0]


def spending_array(spec, beta):
    """Vectorised :func:`spending`; returns ``(s, 1 - s)`` arrays."""
    beta = np.ascontiguousarray(beta, dtype=float)
    if spec.is_step:
        s = np.where(beta > spec.mu, 1.0, np.where(beta < spec.mu, 0.0, 0.5))
        return s, 1.0 - s
    return kernels.fab_ginv_batch(2.0 * spec.scale * (beta - spec.mu) / spec.tau2, spec.alpha)


def umau_interval(beta_hat, w, sigma_hat, df, alpha=0.05):
    """Equal-tailed t interval ``beta_hat + w sigma_hat t_{alpha/2, 1 - alpha/2}``."""
    alpha = _check_alpha(alpha, 1.0)
    half = w * sigma_hat * -t_quantile(0.5 * alpha, df)
    return IntervalResult(beta_hat - half, beta_hat + half, UMAU)


def umau_interval_z(beta_hat, w, sigma, alpha=0.05):
    alpha = _check_alpha(alpha, 1.0)
    half = w * sigma * -kernels.norm_ppf(0.5 * alpha)
    return IntervalResult(beta_hat - half, beta_hat + half, UMAU)


def _solve(beta_hat, r, spec, df, tol, maxiter, method):
    if not r > 0:
        raise DomainError(f"interval scale w * sigma_hat must be positive, got {r!r}")
    lo, hi, iters, res_lo, res_hi, status = kernels.fab_endpoints(
        float(beta_hat), float(r), spec.mu, spec.tau2, spec.scale, spec.alpha,
        float(df), float(tol), int(maxiter))
    residual = max(res_lo, res_hi)
    if status != 0 or not residual <= tol:
        raise ConvergenceError(
            f"endpoint solver failed: {_STATUS.get(status, 'residual above tolerance')}",
            beta_hat=beta_hat, scale=r, mu=spec.mu, tau2=spec.tau2, lower=lo, upper=hi,
            residual_lower=res_lo, residual_upper=res_hi, iterations=iters)
    return IntervalResult(lo, hi, method, iters, residual, res_lo, res_hi)


def fab_interval_t(beta_hat, sigma_hat, df, spec, tol=DEFAULT_TOL, maxiter=DEFAULT_MAXITER):
    """Adaptive FAB interval with estimated variance (t quantiles).

    ``spec`` must be independent of ``(beta_hat, sigma_hat)`` for the interval
    to keep exact coverage; that is the caller's responsibility.
    """
    if isinstance(df, bool) or int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be an integer >= 1, got {df!r}")
    return _solve(beta_hat, spec.w * sigma_hat, spec, int(df), tol, maxiter, FAB_T)


def fab_interval_z(beta_hat, spec, tol=DEFAULT_TOL, maxiter=DEFAULT_MAXITER):
    """FAB interval with known variance ``spec.sigma**2`` (normal quantiles)."""
    return _solve(beta_hat, spec.scale, spec, 0, tol, maxiter, FAB_Z_ORACLE)


def endpoint_residuals(interval, beta_hat, r, spec, df):
    """Recompute both endpoint-equation residuals; ``df = 0`` means normal."""
    cdf = kernels.norm_cdf if df == 0 else (lambda x: kernels.t_cdf(x, float(df)))
    s_lo = spending(spec, interval.lower)
    s_hi = spending(spec, interval.upper)
    res_lo = cdf((interval.lower - beta_hat) / r) - spec.alpha * (1.0 - s_lo)
    res_hi = cdf((beta_hat - interval.upper) / r) - spec.alpha * s_hi
    return res_lo, res_hi


def region_membership(theta, beta_hat, sigma_hat, df, s, alpha=0.05, w=1.0):
    """Membership of ``theta`` in the inverted acceptance region of ``s``.

    ``s`` is any function into [0, 1], nondecreasing or not.  ``theta`` may be
    a scalar or an array; ``s`` is called elementwise unless it accepts and
    returns arrays of the same shape.  ``df = 0`` selects normal quantiles.
    """
    alpha = _check_alpha(alpha, 1.0)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    try:
        sv = np.asarray(s(th), dtype=float)
        if sv.shape != th.shape:
            raise ValueError
    except (TypeError, ValueError):
        sv = np.array([float(s(t)) for t in th])
    out = membership_from_spending(th, sv, beta_hat, w * sigma_hat, df, alpha)
    return bool(out[0]) if np.ndim(theta) == 0 else out


def membership_from_spending(theta, s, beta_hat, r, df, alpha):
    """Vectorised membership test given spending values ``s`` at ``theta``."""
    theta = np.ascontiguousarray(theta, dtype=float)
    s = np.clip(np.ascontiguousarray(s, dtype=float), 0.0, 1.0)
    lower = beta_hat + r * kernels.ppf_batch(np.ascontiguousarray(alpha * (1.0 - s)), float(df))
    upper = beta_hat + r * kernels.ppf_batch(np.ascontiguousarray(1.0 - alpha * s), float(df))
    return (lower < theta) & (theta < upper)


def fab_membership(theta, beta_hat, sigma_hat, df, spec):
    """Membership in the FAB region of ``spec`` on a grid of ``theta``."""
    s, _ = spending_array(spec, theta)
    return membership_from_spending(theta, s, beta_hat, spec.w * sigma_hat, df, spec.alpha)
