"""Normal, Student-t and chi-square helpers plus the exact binomial interval.

All quantile accuracy decisions live here.  Quantiles start from the cephes
inverses shipped with scipy and take one Newton step against our own CDF,
always on the lower tail so the step is taken where the CDF has full
relative precision.
"""

import numpy as np
from scipy import stats

from ._backend import kernels
from .errors import DomainError

__all__ = [
    "normal_cdf", "normal_quantile", "t_cdf", "t_quantile", "t_pdf",
    "clopper_pearson", "binomial_acceptance_band", "make_rng", "sample_normal", "sample_chi_square",
]


def _check_prob_open(p, name="p"):
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"{name} must lie strictly inside (0, 1), got {p!r}")
    return p


def _check_df(q):
    if isinstance(q, bool) or int(q) != q or q < 1:
        raise DomainError(f"degrees of freedom must be an integer >= 1, got {q!r}")
    return int(q)


def normal_cdf(x):
    """Standard normal CDF; saturates to 0/1 in the extreme tails."""
    return kernels.norm_cdf(float(x))


def normal_quantile(p):
    return kernels.norm_ppf(_check_prob_open(p))


def t_cdf(x, q):
    """CDF of Student's t with integer ``q`` degrees of freedom.

    Evaluated through the regularized incomplete beta function, switching to
    the complementary form near zero so both tails and the centre keep full
    precision.
    """
    return kernels.t_cdf(float(x), float(_check_df(q)))


def t_pdf(x, q):
    return kernels.t_pdf(float(x), float(_check_df(q)))


def t_quantile(p, q):
    return kernels.t_ppf(_check_prob_open(p), float(_check_df(q)))


def clopper_pearson(successes, trials, level=0.95):
    """Exact (Clopper-Pearson) binomial confidence interval for a proportion."""
    if int(trials) != trials or trials < 1:
        raise DomainError(f"trials must be a positive integer, got {trials!r}")
    if int(successes) != successes or not 0 <= successes <= trials:
        raise DomainError(f"successes must be an integer in [0, trials], got {successes!r}")
    level = _check_prob_open(level, "level")
    k, n = int(successes), int(trials)
    tail = 0.5 * (1.0 - level)
    lower = 0.0 if k == 0 else float(stats.beta.ppf(tail, k, n - k + 1))
    upper = 1.0 if k == n else float(stats.beta.ppf(1.0 - tail, k + 1, n - k))
    return lower, upper


def binomial_acceptance_band(trials, p0, level=0.99):
    """Hit counts ``[lo, hi]`` not rejected by the equal-tailed exact binomial
    test of ``p = p0`` at significance ``1 - level``."""
    tail = 0.5 * (1.0 - level)
    dist = stats.binom(int(trials), float(p0))
    lo = int(dist.ppf(tail))
    while dist.cdf(lo) <= tail:
        lo += 1
    hi = int(dist.isf(tail))
    while dist.sf(hi - 1) <= tail:
        hi -= 1
    while dist.sf(hi) > tail:
        hi += 1
    return lo, hi


def make_rng(seed, *stream):
    """Seeded PCG64 generator; ``stream`` entries select an independent substream."""
    if seed is None:
        raise DomainError("an explicit integer seed is required")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence([seed, *[int(s) for s in stream]])
    return np.random.Generator(np.random.PCG64(ss))


def sample_normal(rng, mean=0.0, sd=1.0, size=None):
    if not sd > 0:
        raise DomainError(f"sd must be positive, got {sd!r}")
    return rng.normal(mean, sd, size=size)


def sample_chi_square(rng, q, size=None):
    return rng.chisquare(_check_df(q), size=size)
