"""Pure-Python kernels.

Mirror of ``_core.pyx``, used when the compiled extension is unavailable or
``FABREG_PURE_PYTHON`` is set.  Every function here has the same name,
signature and return layout as its compiled twin.
"""

import math

import numpy as np
from scipy.special import betainc, betaln, log_ndtr, ndtr, ndtri, stdtrit

EPS = 2.220446049250313e-16
STEP_TAU2_RATIO = 1e-12
# a bracket end is a root in exact arithmetic when s underflows or sits at
# 1/2; a log-ratio this small there is roundoff (t cdf/ppf lose ~1e-11 at
# df ~ 1e7), not a sign.  phi has slope ~2/r at both ends, so accepting the
# end moves theta by at most ~r * 1e-9 / 2
BRACKET_SLACK = 1e-9
# width of the epsilon-active set in the box-constrained MLE (scaled units)
ACTIVE_EPS = 1e-3
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

OK = 0
MAXITER = 1
BAD_BRACKET = 2
RESIDUAL = 3
NONFINITE = 4


# ---------------------------------------------------------------------------
# distribution functions
# ---------------------------------------------------------------------------

def norm_pdf(x):
    return math.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def norm_cdf(x):
    return float(ndtr(x))


def norm_ppf(p):
    if not (0.0 < p < 1.0):
        return math.nan
    if p > 0.5:
        return -norm_ppf(1.0 - p)
    if p == 0.5:
        return 0.0
    x = float(ndtri(p))
    d = norm_pdf(x)
    if d > 0.0 and math.isfinite(x):
        x -= (float(ndtr(x)) - p) / d
    return x


def t_pdf(x, df):
    q = float(df)
    return math.exp(math.lgamma(0.5 * (q + 1.0)) - math.lgamma(0.5 * q)
                    - 0.5 * math.log(q * math.pi)
                    - 0.5 * (q + 1.0) * math.log1p(x * x / q))


def t_cdf(x, df):
    q = float(df)
    if x == 0.0:
        return 0.5
    x2 = x * x
    if x2 < q:
        # near the centre: I_x(1/2, q/2) on x^2/(q+x^2) keeps full precision,
        # but 0.5 - half cancels once the tail is small
        half = 0.5 * float(betainc(0.5, 0.5 * q, x2 / (q + x2)))
        if half < 0.45:
            return 0.5 + half if x > 0 else 0.5 - half
    tail = 0.5 * float(betainc(0.5 * q, 0.5, q / (q + x2)))
    return 1.0 - tail if x > 0 else tail


def t_ppf(p, df):
    if not (0.0 < p < 1.0):
        return math.nan
    if p > 0.5:
        return -t_ppf(1.0 - p, df)
    if p == 0.5:
        return 0.0
    x = float(stdtrit(float(df), p))
    if math.isfinite(x):
        d = t_pdf(x, df)
        if d > 0.0:
            x -= (t_cdf(x, df) - p) / d
    return x


def _cdf(x, df):
    return t_cdf(x, df) if df > 0 else norm_cdf(x)


def _log_cdf(x, df):
    if df <= 0:
        return float(log_ndtr(x))
    c = t_cdf(x, df)
    if c > 1e-300:
        return math.log(c)
    # lower tail 0.5 I_y(q/2, 1/2), y = q/(q+x^2), from the leading terms of
    # the hypergeometric series; the relative error is O(y^2)
    q = float(df)
    a = 0.5 * q
    log_y = math.log(q) - 2.0 * math.log(abs(x)) - math.log1p(q / (x * x))
    y = math.exp(log_y)
    return (math.log(0.5) + a * log_y + 0.5 * math.log1p(-y) - math.log(a)
            - float(betaln(a, 0.5)) + math.log1p((a + 0.5) / (a + 1.0) * y))


def _ppf(p, df):
    return t_ppf(p, df) if df > 0 else norm_ppf(p)


# ---------------------------------------------------------------------------
# spending function
# ---------------------------------------------------------------------------

def fab_g(s, alpha):
    if s <= 0.0:
        return -math.inf
    if s >= 1.0:
        return math.inf
    return norm_ppf(alpha * s) - norm_ppf(alpha * (1.0 - s))


def _ginv_v(x, alpha):
    """``v = Phi^-1(alpha * small)`` where ``small`` is the member of
    ``(s, 1 - s)`` that is <= 1/2 and ``g(s) = x``, ``x != 0``."""
    xn = -abs(x)
    zh = norm_ppf(0.5 * alpha)
    za = norm_ppf(alpha)
    # k(v) = v - Phi^-1(alpha - Phi(v)) has slope in [1, 2] and k(zh) = 0
    lo = zh + xn
    hi = zh + 0.5 * xn
    v = min(xn + za, hi)
    if v < lo:
        v = lo
    for _ in range(100):
        pv = float(ndtr(v))
        u = norm_ppf(alpha - pv)
        k = v - u - xn
        if k == 0.0:
            break
        if k > 0.0:
            hi = v
        else:
            lo = v
        du = norm_pdf(u)
        dk = 1.0 + (norm_pdf(v) / du if du > 0.0 else 0.0)
        vn = v - k / dk
        if not (lo < vn < hi):
            vn = 0.5 * (lo + hi)
        if abs(vn - v) <= 4.0 * EPS * (1.0 + abs(v)):
            v = vn
            break
        v = vn
    return v


def fab_ginv(x, alpha):
    """Return ``(s, 1 - s)`` with ``g(s) = x``; the smaller member is exact."""
    if x != x:
        return math.nan, math.nan
    if x == 0.0:
        return 0.5, 0.5
    if math.isinf(x):
        return (1.0, 0.0) if x > 0 else (0.0, 1.0)
    small = min(float(ndtr(_ginv_v(x, alpha))) / alpha, 0.5)
    if x < 0.0:
        return small, 1.0 - small
    return 1.0 - small, small


def _log_alpha_sc(x, alpha):
    """``log(alpha * (1 - s))`` for ``g(s) = x``, finite far past underflow."""
    if x == 0.0:
        return math.log(0.5 * alpha)
    if math.isinf(x):
        return -math.inf if x > 0 else math.log(alpha)
    v = _ginv_v(x, alpha)
    if x > 0.0:
        return min(float(log_ndtr(v)), math.log(0.5 * alpha))
    return math.log(alpha) + math.log1p(-min(float(ndtr(v)) / alpha, 0.5))


def fab_ginv_batch(x, alpha):
    x = np.asarray(x, dtype=float)
    s = np.empty(x.shape[0])
    sc = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        s[i], sc[i] = fab_ginv(float(x[i]), alpha)
    return s, sc


def ppf_batch(p, df):
    """Quantiles with ``p <= 0 -> -inf`` and ``p >= 1 -> +inf``."""
    p = np.asarray(p, dtype=float)
    out = np.empty(p.shape[0])
    for i in range(p.shape[0]):
        pi = float(p[i])
        if pi <= 0.0:
            out[i] = -math.inf
        elif pi >= 1.0:
            out[i] = math.inf
        else:
            out[i] = _ppf(pi, df)
    return out


def _h_lower(delta, d0, r, tau2, sw, alpha, df):
    # theta = mu + delta; d0 = mu - beta_hat
    _, sc = fab_ginv(2.0 * sw * delta / tau2, alpha)
    return _cdf((d0 + delta) / r, df) - alpha * sc


def _phi_lower(delta, d0, r, tau2, sw, alpha, df):
    # log of the two terms of h: same sign and root as h, but no underflow
    # when both terms vanish, which happens far from mu with a small tau2
    return (_log_cdf((d0 + delta) / r, df)
            - _log_alpha_sc(2.0 * sw * delta / tau2, alpha))


def _brent(d0, r, tau2, sw, alpha, df, a, b, tol, maxiter):
    """Root of the lower endpoint equation on ``[a, b]`` in delta coordinates.

    Iterates on the log-ratio ``phi``; converged means ``|h| <= tol`` with the
    bracket at ``EPS * r``, since ``|h|`` alone says little where both terms
    are tiny.  The reported residual is always ``|h|``.
    """
    args = (d0, r, tau2, sw, alpha, df)
    fa = _phi_lower(a, *args)
    fb = _phi_lower(b, *args)
    if fa == 0.0 or fb == 0.0 or (fa > 0.0) == (fb > 0.0):
        if abs(fa) <= BRACKET_SLACK and abs(fa) <= abs(fb):
            return a, abs(_h_lower(a, *args)), 0, OK
        if abs(fb) <= BRACKET_SLACK:
            return b, abs(_h_lower(b, *args)), 0, OK
        return math.nan, math.nan, 0, BAD_BRACKET
    c, fc = a, fa
    d = e = b - a
    for it in range(1, maxiter + 1):
        if (fb > 0.0) == (fc > 0.0):
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol1 = 2.0 * EPS * abs(b) + 1e-300
        xm = 0.5 * (c - b)
        if fb == 0.0 or abs(xm) <= tol1 + EPS * r:
            res = abs(_h_lower(b, *args))
            if res <= tol:
                return b, res, it, OK
            if fb == 0.0 or abs(xm) <= tol1:
                # bracket exhausted at float resolution
                if abs(fc) < abs(fb):
                    b = c
                    res = abs(_h_lower(b, *args))
                return b, res, it, (OK if res <= tol else RESIDUAL)
        if abs(e) >= tol1 and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2.0 * xm * s
                q = 1.0 - s
            else:
                q = fa / fc
                rr = fb / fc
                p = s * (2.0 * xm * q * (q - rr) - (b - a) * (rr - 1.0))
                q = (q - 1.0) * (rr - 1.0) * (s - 1.0)
            if p > 0.0:
                q = -q
            p = abs(p)
            if 2.0 * p < min(3.0 * xm * q - abs(tol1 * q), abs(e * q)):
                e = d
                d = p / q
            else:
                d = xm
                e = d
        else:
            d = xm
            e = d
        a, fa = b, fb
        if abs(d) > tol1:
            b += d
        else:
            b += tol1 if xm > 0 else -tol1
        fb = _phi_lower(b, *args)
    res = abs(_h_lower(b, *args))
    return b, res, maxiter, (OK if res <= tol else MAXITER)


def _lower_endpoint(beta_hat, r, mu, tau2, sw, alpha, df, tol, maxiter):
    if tau2 <= STEP_TAU2_RATIO * sw * sw:
        # step spending function: closed form on each side of mu
        x = _ppf(alpha, df)
        cand = beta_hat + r * x
        if mu < cand:
            return mu, 0.0, 0, OK
        return cand, abs(_cdf(x, df) - alpha), 0, OK
    d0 = mu - beta_hat
    a = min(0.0, -d0 + r * _ppf(0.5 * alpha, df))
    b = -d0 + r * _ppf(alpha, df)
    delta, res, it, status = _brent(d0, r, tau2, sw, alpha, df, a, b, tol, maxiter)
    return mu + delta, res, it, status


def fab_endpoints(beta_hat, r, mu, tau2, sw, alpha, df, tol, maxiter):
    """Solve both endpoint equations.

    ``df <= 0`` selects normal quantiles (known-variance interval).  Returns
    ``(lower, upper, iterations, residual_lower, residual_upper, status)``.
    """
    lo, res_lo, it_lo, st_lo = _lower_endpoint(
        beta_hat, r, mu, tau2, sw, alpha, df, tol, maxiter)
    # upper endpoint is the mirrored lower endpoint of (-beta_hat, -mu)
    nlo, res_hi, it_hi, st_hi = _lower_endpoint(
        -beta_hat, r, -mu, tau2, sw, alpha, df, tol, maxiter)
    status = st_lo if st_lo != OK else st_hi
    return lo, -nlo, it_lo + it_hi, res_lo, res_hi, status


def fab_endpoints_batch(beta_hat, r, mu, tau2, sw, alpha, df, tol, maxiter):
    n = len(beta_hat)
    lo = np.empty(n)
    hi = np.empty(n)
    iters = np.empty(n, dtype=np.int64)
    res = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    for i in range(n):
        a, b, it, r_lo, r_hi, st = fab_endpoints(
            float(beta_hat[i]), float(r[i]), float(mu[i]), float(tau2[i]),
            float(sw[i]), alpha, df, tol, maxiter)
        lo[i] = a
        hi[i] = b
        iters[i] = it
        res[i] = max(r_lo, r_hi)
        status[i] = st
    return lo, hi, iters, res, status


# ---------------------------------------------------------------------------
# diagonal marginal likelihood
# ---------------------------------------------------------------------------

def _profile_mu(z, lam, d, t, s):
    v = lam * t + s
    den = np.sum(d * d / v)
    if den <= 0.0:
        return 0.0
    return float(np.sum(d * z / v) / den)


def marginal_nll(z, lam, d, tau2, sigma2, mu):
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    v = lam * tau2 + sigma2
    e = z if d is None else z - np.asarray(d, dtype=float) * mu
    return float(np.mean(e * e / v + np.log(v)))


def _derivs(z, lam, d, t, s):
    m = z.shape[0]
    v = lam * t + s
    if d is None:
        mu = 0.0
        e = z
    else:
        mu = _profile_mu(z, lam, d, t, s)
        e = z - d * mu
    e2 = e * e
    f = float(np.sum(e2 / v + np.log(v))) / m
    fv = (1.0 / v - e2 / (v * v))
    fvv = 2.0 * e2 / (v * v * v) - 1.0 / (v * v)
    g = np.array([np.sum(lam * fv), np.sum(fv)]) / m
    htt = np.sum(lam * lam * fvv)
    hts = np.sum(lam * fvv)
    hss = np.sum(fvv)
    if d is not None:
        hmm = np.sum(2.0 * d * d / v)
        if hmm > 0.0:
            htm = np.sum(2.0 * d * e * lam / (v * v))
            hsm = np.sum(2.0 * d * e / (v * v))
            htt -= htm * htm / hmm
            hts -= htm * hsm / hmm
            hss -= hsm * hsm / hmm
    h = np.array([[htt, hts], [hts, hss]]) / m
    return f, g, h, mu


def _objective(z, lam, d, t, s):
    mu = 0.0 if d is None else _profile_mu(z, lam, d, t, s)
    return marginal_nll(z, lam, d, t, s, mu)


def seed_grid(tau2_max, s2_min, s2_max):
    tg = np.concatenate(([0.0], np.logspace(math.log10(tau2_max) - 14.0,
                                            math.log10(tau2_max), 15)))
    sg = np.logspace(math.log10(s2_min), math.log10(s2_max), 16)
    return tg, sg


def _modified_newton(h0, h1, h2, g0, g1):
    # Newton step with the 2x2 Hessian's eigenvalues replaced by their
    # absolute values (floored); a descent direction even on the ridge
    # where the Hessian is indefinite
    mean = 0.5 * (h0 + h2)
    rad = math.sqrt(0.25 * (h0 - h2) * (h0 - h2) + h1 * h1)
    l1 = mean + rad
    l2 = mean - rad
    if h1 != 0.0:
        vx = l1 - h2
        vy = h1
        nv = math.sqrt(vx * vx + vy * vy)
        vx /= nv
        vy /= nv
    elif h0 >= h2:
        vx, vy = 1.0, 0.0
    else:
        vx, vy = 0.0, 1.0
    floor = 1e-10 * max(abs(l1), abs(l2), 1e-300)
    a1 = max(abs(l1), floor)
    a2 = max(abs(l2), floor)
    p1 = (vx * g0 + vy * g1) / a1
    p2 = (-vy * g0 + vx * g1) / a2
    return -(p1 * vx - p2 * vy), -(p1 * vy + p2 * vx)


def marginal_mle(z, lam, d, tau2_max, s2_min, s2_max, gtol, maxiter):
    """Minimise the mean negative log-likelihood over the box.

    Returns ``(tau2, sigma2, mu, nll, iterations, status, seed_nll)``.
    """
    z = np.ascontiguousarray(z, dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    if d is not None:
        d = np.ascontiguousarray(d, dtype=float)
    tg, sg = seed_grid(tau2_max, s2_min, s2_max)
    tt = np.repeat(tg, sg.size)
    ss = np.tile(sg, tg.size)
    v = lam[None, :] * tt[:, None] + ss[:, None]
    if d is None:
        e = np.broadcast_to(z, v.shape)
    else:
        den = np.sum(d * d / v, axis=1)
        mus = np.where(den > 0, np.sum(d * z / v, axis=1) / np.where(den > 0, den, 1.0), 0.0)
        e = z[None, :] - mus[:, None] * d[None, :]
    fgrid = np.mean(e * e / v + np.log(v), axis=1)
    k = int(np.argmin(fgrid))
    seed_f, t, s = float(fgrid[k]), float(tt[k]), float(ss[k])
    f, g, h, mu = _derivs(z, lam, d, t, s)
    status = MAXITER
    it = 0
    for it in range(1, maxiter + 1):
        pgt = t - min(max(t - g[0], 0.0), tau2_max)
        pgs = s - min(max(s - g[1], s2_min), s2_max)
        if math.sqrt(pgt * pgt + pgs * pgs) <= gtol:
            status = OK
            break
        h0, h1, h2 = float(h[0, 0]), float(h[0, 1]), float(h[1, 1])
        g0, g1 = float(g[0]), float(g[1])
        # epsilon-active set: near a bound with the gradient pointing out,
        # take a projected gradient step in that coordinate
        eps = min(ACTIVE_EPS, math.sqrt(pgt * pgt + pgs * pgs))
        free_t = not ((t <= eps and g0 > 0) or (t >= tau2_max - eps and g0 < 0))
        free_s = not ((s <= s2_min + eps and g1 > 0) or (s >= s2_max - eps and g1 < 0))
        dt, ds = -g0, -g1
        if free_t and free_s:
            dt, ds = _modified_newton(h0, h1, h2, g0, g1)
        elif free_t:
            dt = -g0 / (abs(h0) if h0 != 0.0 else 1.0)
        elif free_s:
            ds = -g1 / (abs(h2) if h2 != 0.0 else 1.0)
        a = 1.0
        accepted = False
        for _ in range(60):
            tn = min(max(t + a * dt, 0.0), tau2_max)
            sn = min(max(s + a * ds, s2_min), s2_max)
            fn = _objective(z, lam, d, tn, sn)
            slope = g0 * (tn - t) + g1 * (sn - s)
            if math.isfinite(fn) and fn <= f + 1e-4 * slope and fn < f:
                accepted = True
                break
            a *= 0.5
        if not accepted:
            # no representable decrease left along a descent direction
            status = OK
            break
        dt, ds = abs(tn - t), abs(sn - s)
        t, s = tn, sn
        f, g, h, mu = _derivs(z, lam, d, t, s)
        if dt <= 1e-12 * (1.0 + t) and ds <= 1e-12 * (1.0 + s):
            status = OK
            break
    if not math.isfinite(f):
        status = NONFINITE
    return float(t), float(s), float(mu), float(f), it, status, float(seed_f)
