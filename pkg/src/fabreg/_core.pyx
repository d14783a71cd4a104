# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: distribution functions, spending function, endpoint
solver and the diagonal marginal-likelihood optimiser.

Same surface as ``_pycore``; see that module for the reference semantics.
"""

import numpy as np

from libc.math cimport (sqrt, log, log10, log1p, exp, fabs, lgamma, isfinite,
                        INFINITY, NAN, M_PI, pow)
from scipy.special.cython_special cimport betainc, betaln, log_ndtr, ndtr, ndtri, stdtrit

cdef double EPS = 2.220446049250313e-16
# a bracket end is a root in exact arithmetic when s underflows or sits at
# 1/2; a log-ratio this small there is roundoff (t cdf/ppf lose ~1e-11 at
# df ~ 1e7), not a sign.  phi has slope ~2/r at both ends, so accepting the
# end moves theta by at most ~r * 1e-9 / 2
cdef double BRACKET_SLACK = 1e-9
cdef double STEP_RATIO = 1e-12
# width of the epsilon-active set in the box-constrained MLE (scaled units)
cdef double ACTIVE_EPS = 1e-3
cdef double LOG_SQRT_2PI = 0.9189385332046727

OK = 0
MAXITER = 1
BAD_BRACKET = 2
RESIDUAL = 3
NONFINITE = 4
STEP_TAU2_RATIO = STEP_RATIO


# ---------------------------------------------------------------------------
# distribution functions
# ---------------------------------------------------------------------------

cdef inline double _norm_pdf(double x) noexcept nogil:
    return exp(-0.5 * x * x - LOG_SQRT_2PI)


cdef double _norm_ppf(double p) noexcept nogil:
    cdef double x, d
    if not (0.0 < p < 1.0):
        return NAN
    if p > 0.5:
        return -_norm_ppf(1.0 - p)
    if p == 0.5:
        return 0.0
    x = ndtri(p)
    d = _norm_pdf(x)
    if d > 0.0 and isfinite(x):
        x -= (ndtr(x) - p) / d
    return x


cdef double _t_pdf(double x, double q) noexcept nogil:
    return exp(lgamma(0.5 * (q + 1.0)) - lgamma(0.5 * q)
               - 0.5 * log(q * M_PI) - 0.5 * (q + 1.0) * log1p(x * x / q))


cdef double _t_cdf(double x, double q) noexcept nogil:
    cdef double x2, half, tail
    if x == 0.0:
        return 0.5
    x2 = x * x
    if x2 < q:
        # 0.5 - half cancels once the tail is small
        half = 0.5 * betainc(0.5, 0.5 * q, x2 / (q + x2))
        if half < 0.45:
            return 0.5 + half if x > 0 else 0.5 - half
    tail = 0.5 * betainc(0.5 * q, 0.5, q / (q + x2))
    return 1.0 - tail if x > 0 else tail


cdef double _t_ppf(double p, double q) noexcept nogil:
    cdef double x, d
    if not (0.0 < p < 1.0):
        return NAN
    if p > 0.5:
        return -_t_ppf(1.0 - p, q)
    if p == 0.5:
        return 0.0
    x = stdtrit(q, p)
    if isfinite(x):
        d = _t_pdf(x, q)
        if d > 0.0:
            x -= (_t_cdf(x, q) - p) / d
    return x


cdef inline double _cdf(double x, double df) noexcept nogil:
    return _t_cdf(x, df) if df > 0 else ndtr(x)


cdef double _log_cdf(double x, double df) noexcept nogil:
    cdef double c, q, a, log_y, y
    if df <= 0:
        return log_ndtr(x)
    c = _t_cdf(x, df)
    if c > 1e-300:
        return log(c)
    # lower tail 0.5 I_y(q/2, 1/2), y = q/(q+x^2), leading series terms
    q = df
    a = 0.5 * q
    log_y = log(q) - 2.0 * log(fabs(x)) - log1p(q / (x * x))
    y = exp(log_y)
    return (log(0.5) + a * log_y + 0.5 * log1p(-y) - log(a)
            - betaln(a, 0.5) + log1p((a + 0.5) / (a + 1.0) * y))


cdef inline double _ppf(double p, double df) noexcept nogil:
    return _t_ppf(p, df) if df > 0 else _norm_ppf(p)


def norm_pdf(double x):
    return _norm_pdf(x)


def norm_cdf(double x):
    return ndtr(x)


def norm_ppf(double p):
    return _norm_ppf(p)


def t_pdf(double x, double df):
    return _t_pdf(x, df)


def t_cdf(double x, double df):
    return _t_cdf(x, df)


def t_ppf(double p, double df):
    return _t_ppf(p, df)


# ---------------------------------------------------------------------------
# spending function
# ---------------------------------------------------------------------------

cdef double _g(double s, double alpha) noexcept nogil:
    if s <= 0.0:
        return -INFINITY
    if s >= 1.0:
        return INFINITY
    return _norm_ppf(alpha * s) - _norm_ppf(alpha * (1.0 - s))


cdef double _ginv_v(double x, double alpha) noexcept nogil:
    """Phi^-1(alpha * small), small the member of (s, 1 - s) <= 1/2, g(s) = x != 0."""
    cdef double xn = -fabs(x)
    cdef double zh = _norm_ppf(0.5 * alpha)
    cdef double za = _norm_ppf(alpha)
    cdef double lo = zh + xn
    cdef double hi = zh + 0.5 * xn
    cdef double v = xn + za
    cdef double u, k, du, dk, vn
    cdef int it
    if v > hi:
        v = hi
    if v < lo:
        v = lo
    for it in range(100):
        u = _norm_ppf(alpha - ndtr(v))
        k = v - u - xn
        if k == 0.0:
            break
        if k > 0.0:
            hi = v
        else:
            lo = v
        du = _norm_pdf(u)
        dk = 1.0 + (_norm_pdf(v) / du if du > 0.0 else 0.0)
        vn = v - k / dk
        if not (lo < vn < hi):
            vn = 0.5 * (lo + hi)
        if fabs(vn - v) <= 4.0 * EPS * (1.0 + fabs(v)):
            v = vn
            break
        v = vn
    return v


cdef inline double _ginv_small(double x, double alpha) noexcept nogil:
    cdef double small = ndtr(_ginv_v(x, alpha)) / alpha
    return 0.5 if small > 0.5 else small


cdef double _log_alpha_sc(double x, double alpha) noexcept nogil:
    """log(alpha * (1 - s)) for g(s) = x, finite far past underflow."""
    cdef double v, lv, small
    if x == 0.0:
        return log(0.5 * alpha)
    if x == INFINITY:
        return -INFINITY
    if x == -INFINITY:
        return log(alpha)
    v = _ginv_v(x, alpha)
    if x > 0.0:
        lv = log_ndtr(v)
        return lv if lv < log(0.5 * alpha) else log(0.5 * alpha)
    small = ndtr(v) / alpha
    if small > 0.5:
        small = 0.5
    return log(alpha) + log1p(-small)


cdef inline void _ginv(double x, double alpha, double* s, double* sc) noexcept nogil:
    cdef double small
    if x != x:
        s[0] = NAN
        sc[0] = NAN
        return
    if x == 0.0:
        s[0] = 0.5
        sc[0] = 0.5
        return
    if x == INFINITY:
        s[0] = 1.0
        sc[0] = 0.0
        return
    if x == -INFINITY:
        s[0] = 0.0
        sc[0] = 1.0
        return
    small = _ginv_small(x, alpha)
    if x < 0.0:
        s[0] = small
        sc[0] = 1.0 - small
    else:
        s[0] = 1.0 - small
        sc[0] = small


def fab_g(double s, double alpha):
    return _g(s, alpha)


def fab_ginv(double x, double alpha):
    """Return ``(s, 1 - s)`` with ``g(s) = x``; the smaller member is exact."""
    cdef double s, sc
    _ginv(x, alpha, &s, &sc)
    return s, sc


def fab_ginv_batch(const double[::1] x, double alpha):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    s_arr = np.empty(n)
    sc_arr = np.empty(n)
    cdef double[::1] s = s_arr
    cdef double[::1] sc = sc_arr
    with nogil:
        for i in range(n):
            _ginv(x[i], alpha, &s[i], &sc[i])
    return s_arr, sc_arr


def ppf_batch(const double[::1] p, double df):
    """Quantiles with ``p <= 0 -> -inf`` and ``p >= 1 -> +inf``."""
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            if p[i] <= 0.0:
                out[i] = -INFINITY
            elif p[i] >= 1.0:
                out[i] = INFINITY
            else:
                out[i] = _ppf(p[i], df)
    return out_arr


# ---------------------------------------------------------------------------
# endpoint solver
# ---------------------------------------------------------------------------

cdef struct Problem:
    double d0
    double r
    double tau2
    double sw
    double alpha
    double df


cdef struct Root:
    double x
    double res
    int iters
    int status


cdef inline double _h_lower(double delta, Problem* P) noexcept nogil:
    cdef double s, sc
    _ginv(2.0 * P.sw * delta / P.tau2, P.alpha, &s, &sc)
    return _cdf((P.d0 + delta) / P.r, P.df) - P.alpha * sc


cdef inline double _phi_lower(double delta, Problem* P) noexcept nogil:
    # log of the two terms of h: same sign and root, no underflow far from mu
    return (_log_cdf((P.d0 + delta) / P.r, P.df)
            - _log_alpha_sc(2.0 * P.sw * delta / P.tau2, P.alpha))


cdef inline Root _done(Problem* P, double x, int iters, int status, double tol) noexcept nogil:
    # the reported residual is |h|; status 0 is kept only if it meets tol
    cdef Root out
    out.x = x
    out.res = fabs(_h_lower(x, P))
    out.iters = iters
    out.status = status if (status != 0 or out.res <= tol) else 3
    return out


cdef Root _brent(Problem* P, double a, double b, double tol, int maxiter) noexcept nogil:
    # iterates on phi; converged means |h| <= tol with the bracket at EPS * r,
    # since |h| alone says little where both terms are tiny
    cdef Root out
    cdef double fa = _phi_lower(a, P)
    cdef double fb = _phi_lower(b, P)
    cdef double c, fc, d, e, tol1, xm, s, p, q, rr, tmp, res
    cdef int it
    if fa == 0.0 or fb == 0.0 or (fa > 0.0) == (fb > 0.0):
        if fabs(fa) <= BRACKET_SLACK and fabs(fa) <= fabs(fb):
            return _done(P, a, 0, 0, INFINITY)
        if fabs(fb) <= BRACKET_SLACK:
            return _done(P, b, 0, 0, INFINITY)
        out.x = NAN
        out.res = NAN
        out.iters = 0
        out.status = 2
        return out
    c = a
    fc = fa
    d = b - a
    e = d
    for it in range(1, maxiter + 1):
        if (fb > 0.0) == (fc > 0.0):
            c = a
            fc = fa
            d = b - a
            e = d
        if fabs(fc) < fabs(fb):
            a = b
            b = c
            c = a
            fa = fb
            fb = fc
            fc = fa
        tol1 = 2.0 * EPS * fabs(b) + 1e-300
        xm = 0.5 * (c - b)
        if fb == 0.0 or fabs(xm) <= tol1 + EPS * P.r:
            res = fabs(_h_lower(b, P))
            if res <= tol:
                out.x = b
                out.res = res
                out.iters = it
                out.status = 0
                return out
            if fb == 0.0 or fabs(xm) <= tol1:
                # bracket exhausted at float resolution
                if fabs(fc) < fabs(fb):
                    b = c
                return _done(P, b, it, 0, tol)
        if fabs(e) >= tol1 and fabs(fa) > fabs(fb):
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
            p = fabs(p)
            tmp = 3.0 * xm * q - fabs(tol1 * q)
            if fabs(e * q) < tmp:
                tmp = fabs(e * q)
            if 2.0 * p < tmp:
                e = d
                d = p / q
            else:
                d = xm
                e = d
        else:
            d = xm
            e = d
        a = b
        fa = fb
        if fabs(d) > tol1:
            b += d
        else:
            b += tol1 if xm > 0 else -tol1
        fb = _phi_lower(b, P)
    out = _done(P, b, maxiter, 0, tol)
    if out.status != 0:
        out.status = 1
    return out


cdef Root _lower_endpoint(double beta_hat, double r, double mu, double tau2,
                          double sw, double alpha, double df, double tol,
                          int maxiter) noexcept nogil:
    cdef Root out
    cdef Problem P
    cdef double x, cand, a, b
    if tau2 <= STEP_RATIO * sw * sw:
        x = _ppf(alpha, df)
        cand = beta_hat + r * x
        out.iters = 0
        out.status = 0
        if mu < cand:
            out.x = mu
            out.res = 0.0
        else:
            out.x = cand
            out.res = fabs(_cdf(x, df) - alpha)
        return out
    P.d0 = mu - beta_hat
    P.r = r
    P.tau2 = tau2
    P.sw = sw
    P.alpha = alpha
    P.df = df
    a = -P.d0 + r * _ppf(0.5 * alpha, df)
    if a > 0.0:
        a = 0.0
    b = -P.d0 + r * _ppf(alpha, df)
    out = _brent(&P, a, b, tol, maxiter)
    out.x = mu + out.x
    return out


def fab_endpoints(double beta_hat, double r, double mu, double tau2, double sw,
                  double alpha, double df, double tol, int maxiter):
    """Solve both endpoint equations.

    ``df <= 0`` selects normal quantiles (known-variance interval).  Returns
    ``(lower, upper, iterations, residual_lower, residual_upper, status)``.
    """
    cdef Root lo = _lower_endpoint(beta_hat, r, mu, tau2, sw, alpha, df, tol, maxiter)
    cdef Root nlo = _lower_endpoint(-beta_hat, r, -mu, tau2, sw, alpha, df, tol, maxiter)
    status = lo.status if lo.status != 0 else nlo.status
    return lo.x, -nlo.x, lo.iters + nlo.iters, lo.res, nlo.res, status


def fab_endpoints_batch(const double[::1] beta_hat, const double[::1] r,
                        const double[::1] mu, const double[::1] tau2,
                        const double[::1] sw, double alpha, double df,
                        double tol, int maxiter):
    cdef Py_ssize_t n = beta_hat.shape[0]
    cdef Py_ssize_t i
    lo_arr = np.empty(n)
    hi_arr = np.empty(n)
    it_arr = np.empty(n, dtype=np.int64)
    res_arr = np.empty(n)
    st_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] lo = lo_arr
    cdef double[::1] hi = hi_arr
    cdef long long[::1] iters = it_arr
    cdef double[::1] res = res_arr
    cdef long long[::1] status = st_arr
    cdef Root a, b
    with nogil:
        for i in range(n):
            a = _lower_endpoint(beta_hat[i], r[i], mu[i], tau2[i], sw[i],
                                alpha, df, tol, maxiter)
            b = _lower_endpoint(-beta_hat[i], r[i], -mu[i], tau2[i], sw[i],
                                alpha, df, tol, maxiter)
            lo[i] = a.x
            hi[i] = -b.x
            iters[i] = a.iters + b.iters
            res[i] = a.res if a.res > b.res else b.res
            status[i] = a.status if a.status != 0 else b.status
    return lo_arr, hi_arr, it_arr, res_arr, st_arr


# ---------------------------------------------------------------------------
# diagonal marginal likelihood
# ---------------------------------------------------------------------------

cdef double _profile_mu(const double[::1] z, const double[::1] lam,
                        const double[::1] d, double t, double s) noexcept nogil:
    cdef Py_ssize_t i, m = z.shape[0]
    cdef double num = 0.0, den = 0.0, v
    for i in range(m):
        v = lam[i] * t + s
        num += d[i] * z[i] / v
        den += d[i] * d[i] / v
    if den <= 0.0:
        return 0.0
    return num / den


cdef double _nll(const double[::1] z, const double[::1] lam, const double[::1] d,
                 bint has_d, double t, double s, double mu) noexcept nogil:
    cdef Py_ssize_t i, m = z.shape[0]
    cdef double acc = 0.0, v, e
    for i in range(m):
        v = lam[i] * t + s
        e = z[i] - d[i] * mu if has_d else z[i]
        acc += e * e / v + log(v)
    return acc / m


cdef double _objective(const double[::1] z, const double[::1] lam,
                       const double[::1] d, bint has_d, double t,
                       double s) noexcept nogil:
    cdef double mu = _profile_mu(z, lam, d, t, s) if has_d else 0.0
    return _nll(z, lam, d, has_d, t, s, mu)


cdef double _derivs(const double[::1] z, const double[::1] lam,
                    const double[::1] d, bint has_d, double t, double s,
                    double* g, double* h, double* mu_out) noexcept nogil:
    cdef Py_ssize_t i, m = z.shape[0]
    cdef double mu = _profile_mu(z, lam, d, t, s) if has_d else 0.0
    cdef double f = 0.0, v, e, e2, fv, fvv, l
    cdef double gt = 0.0, gs = 0.0, htt = 0.0, hts = 0.0, hss = 0.0
    cdef double hmm = 0.0, htm = 0.0, hsm = 0.0
    for i in range(m):
        l = lam[i]
        v = l * t + s
        e = z[i] - d[i] * mu if has_d else z[i]
        e2 = e * e
        f += e2 / v + log(v)
        fv = 1.0 / v - e2 / (v * v)
        fvv = 2.0 * e2 / (v * v * v) - 1.0 / (v * v)
        gt += l * fv
        gs += fv
        htt += l * l * fvv
        hts += l * fvv
        hss += fvv
        if has_d:
            hmm += 2.0 * d[i] * d[i] / v
            htm += 2.0 * d[i] * e * l / (v * v)
            hsm += 2.0 * d[i] * e / (v * v)
    if has_d and hmm > 0.0:
        htt -= htm * htm / hmm
        hts -= htm * hsm / hmm
        hss -= hsm * hsm / hmm
    g[0] = gt / m
    g[1] = gs / m
    h[0] = htt / m
    h[1] = hts / m
    h[2] = hss / m
    mu_out[0] = mu
    return f / m


cdef inline double _clip(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def seed_grid(double tau2_max, double s2_min, double s2_max):
    tg = np.concatenate(([0.0], np.logspace(log10(tau2_max) - 14.0,
                                            log10(tau2_max), 15)))
    sg = np.logspace(log10(s2_min), log10(s2_max), 16)
    return tg, sg


def marginal_nll(z, lam, d, double tau2, double sigma2, double mu):
    cdef double[::1] zz = np.ascontiguousarray(z, dtype=float)
    cdef double[::1] ll = np.ascontiguousarray(lam, dtype=float)
    cdef double[::1] dd = zz if d is None else np.ascontiguousarray(d, dtype=float)
    return _nll(zz, ll, dd, d is not None, tau2, sigma2, mu)


cdef void _modified_newton(double h0, double h1, double h2, double g0, double g1,
                           double* dt, double* ds) noexcept nogil:
    # Newton step with the 2x2 Hessian's eigenvalues replaced by their
    # absolute values (floored); a descent direction even on the ridge
    # where the Hessian is indefinite
    cdef double mean = 0.5 * (h0 + h2)
    cdef double rad = sqrt(0.25 * (h0 - h2) * (h0 - h2) + h1 * h1)
    cdef double l1 = mean + rad
    cdef double l2 = mean - rad
    cdef double vx, vy, nv, floor, a1, a2, p1, p2
    if h1 != 0.0:
        vx = l1 - h2
        vy = h1
        nv = sqrt(vx * vx + vy * vy)
        vx /= nv
        vy /= nv
    elif h0 >= h2:
        vx = 1.0
        vy = 0.0
    else:
        vx = 0.0
        vy = 1.0
    floor = 1e-10 * max(fabs(l1), fabs(l2), 1e-300)
    a1 = max(fabs(l1), floor)
    a2 = max(fabs(l2), floor)
    p1 = (vx * g0 + vy * g1) / a1
    p2 = (-vy * g0 + vx * g1) / a2
    dt[0] = -(p1 * vx - p2 * vy)
    ds[0] = -(p1 * vy + p2 * vx)


def marginal_mle(z, lam, d, double tau2_max, double s2_min, double s2_max,
                 double gtol, int maxiter):
    """Minimise the mean negative log-likelihood over the box.

    Returns ``(tau2, sigma2, mu, nll, iterations, status, seed_nll)``.
    """
    cdef double[::1] zz = np.ascontiguousarray(z, dtype=float)
    cdef double[::1] ll = np.ascontiguousarray(lam, dtype=float)
    cdef bint has_d = d is not None
    cdef double[::1] dd = np.ascontiguousarray(d, dtype=float) if has_d else zz
    tg_arr, sg_arr = seed_grid(tau2_max, s2_min, s2_max)
    cdef double[::1] tg = tg_arr
    cdef double[::1] sg = sg_arr
    cdef double best = INFINITY, f, fn, seed_f, t = 0.0, s = sg[0], tn, sn
    cdef double g[2]
    cdef double h[3]
    cdef double mu = 0.0, mun, dt, ds, pgt, pgs, a, slope, eps
    cdef bint free_t, free_s, accepted
    cdef int it = 0, status = 1, k, ls
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(tg.shape[0]):
            for j in range(sg.shape[0]):
                f = _objective(zz, ll, dd, has_d, tg[i], sg[j])
                if f < best:
                    best = f
                    t = tg[i]
                    s = sg[j]
        seed_f = best
        f = _derivs(zz, ll, dd, has_d, t, s, g, h, &mu)
        for k in range(1, maxiter + 1):
            it = k
            pgt = t - _clip(t - g[0], 0.0, tau2_max)
            pgs = s - _clip(s - g[1], s2_min, s2_max)
            if sqrt(pgt * pgt + pgs * pgs) <= gtol:
                status = 0
                break
            eps = min(ACTIVE_EPS, sqrt(pgt * pgt + pgs * pgs))
            free_t = not ((t <= eps and g[0] > 0) or (t >= tau2_max - eps and g[0] < 0))
            free_s = not ((s <= s2_min + eps and g[1] > 0) or (s >= s2_max - eps and g[1] < 0))
            dt = -g[0]
            ds = -g[1]
            if free_t and free_s:
                _modified_newton(h[0], h[1], h[2], g[0], g[1], &dt, &ds)
            elif free_t:
                dt = -g[0] / (fabs(h[0]) if h[0] != 0.0 else 1.0)
            elif free_s:
                ds = -g[1] / (fabs(h[2]) if h[2] != 0.0 else 1.0)
            a = 1.0
            accepted = False
            for ls in range(60):
                tn = _clip(t + a * dt, 0.0, tau2_max)
                sn = _clip(s + a * ds, s2_min, s2_max)
                fn = _objective(zz, ll, dd, has_d, tn, sn)
                slope = g[0] * (tn - t) + g[1] * (sn - s)
                if isfinite(fn) and fn <= f + 1e-4 * slope and fn < f:
                    accepted = True
                    break
                a *= 0.5
            if not accepted:
                status = 0
                break
            dt = fabs(tn - t)
            ds = fabs(sn - s)
            t = tn
            s = sn
            f = _derivs(zz, ll, dd, has_d, t, s, g, h, &mu)
            if dt <= 1e-12 * (1.0 + t) and ds <= 1e-12 * (1.0 + s):
                status = 0
                break
    if not isfinite(f):
        status = 4
    return t, s, mu, f, it, status, seed_f
