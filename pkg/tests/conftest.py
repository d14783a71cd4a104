"""Shared oracles.

Reference values here come from code paths independent of the package:
mpmath at 40 digits for normal and t functions, scipy for the grid-scan
endpoint oracle, and plain numpy for dense linear algebra.
"""

import mpmath
import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtri, ndtri_exp

mpmath.mp.dps = 40


def mp_norm_cdf(x):
    return float(0.5 * mpmath.erfc(-mpmath.mpf(x) / mpmath.sqrt(2)))


def mp_norm_ppf(p):
    # bisection keeps full precision deep in the lower tail
    return bisect(mp_norm_cdf, -40.0, 40.0, p)


def mp_t_cdf(x, q):
    x = mpmath.mpf(x)
    q = mpmath.mpf(q)
    tail = 0.5 * mpmath.betainc(q / 2, 0.5, 0, q / (q + x * x), regularized=True)
    return float(1 - tail if x > 0 else tail)


def bisect(f, lo, hi, target, iters=200):
    flo = f(lo) - target
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid) - target
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def _oracle_cdf(x, df):
    return stats.norm.cdf(x) if df == 0 else stats.t.cdf(x, df)


def _oracle_logcdf(x, df):
    if df == 0:
        return stats.norm.logcdf(x)
    out = np.asarray(stats.t.logcdf(x, df), dtype=float)
    deep = ~np.isfinite(out)
    if deep.any():
        # scipy underflows far in the t tail; mpmath does not
        q = mpmath.mpf(df)
        out[deep] = [float(mpmath.log(0.5 * mpmath.betainc(q / 2, 0.5, 0, q / (q + mpmath.mpf(v) ** 2),
                                                           regularized=True)))
                     for v in np.asarray(x, dtype=float)[deep]]
    return out


def grid_endpoints(beta_hat, r, mu, tau2, sw, alpha, df, step=1e-5, halfwidth=None, coarse=1e-2):
    """Endpoints of the FAB interval by scanning residual signs on a grid.

    g^-1 is never evaluated.  With x = 2 sw (theta - mu) / tau2 and g
    increasing, the lower residual F((theta - b)/r) - alpha (1 - s(theta)) is
    positive iff x > g(s*), s* = 1 - F/alpha, and
    g(s*) = Phi^-1(alpha - F) - Phi^-1(F); Phi^-1(F) comes from log F so the
    test stays exact after F underflows.  The upper equation is the mirror.
    Uses scipy (and mpmath deep in t tails) only.  Sign changes are located
    at spacing ``coarse`` and then resolved at spacing ``step``.
    """
    if halfwidth is None:
        halfwidth = abs(beta_hat - mu) + 2 * r * abs(stats.t.ppf(alpha / 4, df or 10**9)) + 1

    def pos_lo(theta):
        x = 2 * sw * (theta - mu) / tau2
        z = (theta - beta_hat) / r
        F = _oracle_cdf(z, df)
        with np.errstate(all="ignore"):
            g = ndtri(alpha - F) - ndtri_exp(_oracle_logcdf(z, df))
        return np.where(F >= alpha, True, x > g)

    def pos_hi(theta):
        x = 2 * sw * (theta - mu) / tau2
        z = (beta_hat - theta) / r
        F = _oracle_cdf(z, df)
        with np.errstate(all="ignore"):
            g = ndtri_exp(_oracle_logcdf(z, df)) - ndtri(alpha - F)
        return np.where(F >= alpha, True, x < g)

    coarse = max(coarse, step)
    theta = np.arange(beta_hat - halfwidth, beta_hat + halfwidth, coarse)
    # lower residual increases through zero, upper residual decreases through zero
    lo_sign, hi_sign = pos_lo(theta), pos_hi(theta)
    i = np.argmax(lo_sign)
    k = len(theta) - 1 - np.argmax(hi_sign[::-1])
    assert lo_sign[i] and not lo_sign[0] and hi_sign[k] and not hi_sign[-1]
    fine = np.arange(theta[i - 1], theta[i] + step, step)
    lo = fine[np.argmax(pos_lo(fine))] - step / 2
    fine = np.arange(theta[k], theta[k + 1] + step, step)
    hi_sign = pos_hi(fine)
    hi = fine[len(fine) - 1 - np.argmax(hi_sign[::-1])] + step / 2
    return lo, hi


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
