"""OLS fit and the per-coefficient projection decomposition.

For coefficient ``j`` write ``a`` for the j-th row of ``(X'X)^-1 X'`` so that
``beta_hat_j = a'y``.  The response splits into three independent pieces

    y = P0 y + P1 y + P2 y,   P1 = aa'/a'a,   P2 = P_X (I - P1),

where ``P_X = X (X'X)^-1 X'`` and ``P0 = I - P_X``.  ``P0 y`` carries
``sigma2_hat``, ``P1 y`` carries ``beta_hat_j`` and everything used to adapt
the interval for ``beta_j`` is computed from ``z2 = G2' y`` with ``G2`` an
orthonormal basis of ``range(P2)``.

Two routes build ``G2``:

* ``direct``: form ``P2`` explicitly and orthonormalise its range with a
  column-pivoted QR.  O(n^2 p) per coefficient; the reference.
* ``fast``: one thin QR ``X = QR`` shared by every coefficient.  In
  ``Q``-coordinates ``a`` is ``c = R^-T e_j`` and ``G2 = Q H`` where ``H`` holds
  the trailing columns of the Householder reflector that maps ``c`` to an
  axis.  Everything then lives in p-space.

Indices are 0-based throughout.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, InputError, RankDeficientError

RANK_TOL = 1e-10
ORTHO_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RegressionData:
    """Response ``y`` (n,), design ``X`` (n, p) and column labels."""

    y: np.ndarray
    X: np.ndarray
    names: tuple = None
    standardize: bool = False

    def __post_init__(self):
        y = _frozen(self.y)
        X = _frozen(self.X)
        if X.ndim == 1:
            X = _frozen(X[:, None])
        if y.ndim != 1 or X.ndim != 2:
            raise InputError(f"y must be a vector and X a matrix, got shapes {y.shape}, {X.shape}")
        n, p = X.shape
        if y.shape[0] != n:
            raise InputError(f"y has {y.shape[0]} rows but X has {n}")
        if p < 1:
            raise InputError("X must have at least one column")
        if n <= p:
            raise InputError(f"need n > p, got n={n}, p={p}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InputError("y and X must contain only finite values")
        names = self.names
        if names is None:
            names = tuple(f"x{k + 1}" for k in range(p))
        names = tuple(str(s) for s in names)
        if len(names) != p:
            raise InputError(f"{len(names)} column names for {p} columns")
        if len(set(names)) != p:
            raise InputError("column names must be unique")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def column_indices(self, cols):
        """Map a mix of names and integer indices to sorted column indices."""
        out = set()
        for c in cols:
            if isinstance(c, (int, np.integer)) and not isinstance(c, bool):
                if not 0 <= c < self.p:
                    raise InputError(f"column index {c} out of range for p={self.p}")
                out.add(int(c))
            elif c in self.names:
                out.add(self.names.index(c))
            else:
                raise InputError(f"unknown column {c!r}")
        return sorted(out)


def check_rank(X, names=None):
    """Raise :class:`RankDeficientError` naming the first dependent column.

    The design is rank deficient when its smallest singular value falls below
    ``RANK_TOL`` times the largest.
    """
    X = np.asarray(X, dtype=float)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv.size and sv[-1] > RANK_TOL * sv[0]:
        return
    # walk the leading column blocks to find the first one that loses rank
    for k in range(X.shape[1]):
        sk = np.linalg.svd(X[:, :k + 1], compute_uv=False)
        if not sk[-1] > RANK_TOL * sk[0]:
            label = names[k] if names is not None else f"x{k + 1}"
            raise RankDeficientError(label, k, sk[-1] / sk[0] if sk[0] > 0 else 0.0)
    label = names[-1] if names is not None else f"x{X.shape[1]}"
    raise RankDeficientError(label, X.shape[1] - 1, sv[-1] / sv[0])


def _householder_complement(c):
    """Orthonormal basis (p, p-1) of the complement of ``c``."""
    p = c.shape[0]
    v = c / np.linalg.norm(c)
    u = v.copy()
    u[0] += 1.0 if v[0] >= 0 else -1.0
    M = np.eye(p) - (2.0 / (u @ u)) * np.outer(u, u)
    return M[:, 1:]


@dataclass(frozen=True)
class CoefficientMap:
    """Design-only pieces of the decomposition for one coefficient.

    ``rot`` maps ``Q'y`` to the eigen-coordinates ``U' z2`` and ``H`` maps it to
    ``z2``; ``spectrum`` holds the eigenvalues of ``X2 X2'`` in descending
    order and ``U`` their eigenvectors.
    """

    j: int
    H: np.ndarray
    X2: np.ndarray
    U: np.ndarray
    spectrum: np.ndarray
    rot: np.ndarray
    mean_design: np.ndarray


class Design:
    """Factorised design matrix shared across responses.

    Holds the thin QR, ``w_j`` and lazily built per-coefficient maps, so a
    simulation can refit thousands of responses against one frozen ``X``.
    """

    def __init__(self, X, names=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] <= X.shape[1]:
            raise InputError(f"need an n x p design with n > p, got shape {X.shape}")
        check_rank(X, names)
        self.X = X
        self.names = tuple(names) if names is not None else tuple(f"x{k + 1}" for k in range(X.shape[1]))
        self.n, self.p = X.shape
        self.df = self.n - self.p
        self.Q, self.R = np.linalg.qr(X)
        Rinv = sla.solve_triangular(self.R, np.eye(self.p))
        # (X'X)^-1 = R^-1 R^-T
        self.w = np.sqrt(np.sum(Rinv * Rinv, axis=1))
        self._Rinv = Rinv
        self._maps = {}

    def fit(self, y):
        y = np.asarray(y, dtype=float)
        qty = self.Q.T @ y
        beta = sla.solve_triangular(self.R, qty)
        resid = y - self.X @ beta
        rss = float(resid @ resid)
        return OlsFit(beta_hat=beta, sigma2_hat=rss / self.df, w=self.w, df=self.df,
                      qty=qty, resid=resid, design=self)

    def coefficient_map(self, j):
        cm = self._maps.get(j)
        if cm is None:
            cm = self._maps[j] = self._build_map(j)
        return cm

    def _build_map(self, j):
        p = self.p
        if not 0 <= j < p:
            raise IndexError(f"coefficient index {j} out of range for p={p}")
        if p == 1:
            return CoefficientMap(j, np.zeros((1, 0)), np.zeros((0, 1)), np.zeros((0, 0)),
                                  np.zeros(0), np.zeros((0, 1)), np.zeros(0))
        # a = Q c with c = R^-T e_j, i.e. the j-th row of R^-1
        c = self._Rinv[j]
        H = _householder_complement(c)
        X2 = H.T @ self.R
        U, sv, _ = np.linalg.svd(X2, full_matrices=False)
        spectrum = sv * sv
        rot = U.T @ H.T
        mean_design = U.T @ (X2 @ np.ones(p))
        return CoefficientMap(j, H, X2, U, spectrum, rot, mean_design)

    @cached_property
    def stacked_maps(self):
        """Arrays (p, p-1, p), (p, p-1), (p, p-1) of rot, spectrum, mean design."""
        maps = [self.coefficient_map(j) for j in range(self.p)]
        rot = np.stack([m.rot for m in maps])
        lam = np.stack([m.spectrum for m in maps])
        dm = np.stack([m.mean_design for m in maps])
        return rot, lam, dm


@dataclass(frozen=True)
class OlsFit:
    beta_hat: np.ndarray
    sigma2_hat: float
    w: np.ndarray
    df: int
    qty: np.ndarray = field(repr=False)
    resid: np.ndarray = field(repr=False)
    design: Design = field(repr=False, compare=False)


def fit_ols(data):
    """Least-squares fit of ``data.y`` on ``data.X``."""
    return Design(data.X, data.names).fit(data.y)


@dataclass(frozen=True)
class CoefficientContext:
    """Statistics for one coefficient.

    ``beta_hat_j`` and ``sigma2_hat`` come from ``P1 y`` and ``P0 y``;
    ``z2``, ``X2`` and ``spectrum`` come from ``P2 y`` only.
    """

    j: int
    beta_hat_j: float
    w_j: float
    sigma2_hat: float
    df: int
    z2: np.ndarray
    X2: np.ndarray
    spectrum: np.ndarray
    G2: np.ndarray = field(default=None, repr=False)

    @property
    def empty(self):
        return self.z2.shape[0] == 0


@dataclass(frozen=True)
class AdaptationData:
    """The part of a coefficient's context that a prior may be fit to.

    Holds nothing computed from ``P0 y`` or ``P1 y``: ``z2`` and the design
    pieces only.  ``U`` (eigenvectors of ``X2 X2'``) is optional.
    """

    j: int
    w_j: float
    z2: np.ndarray
    X2: np.ndarray
    spectrum: np.ndarray
    U: np.ndarray = field(default=None, repr=False)

    @property
    def empty(self):
        return self.z2.shape[0] == 0


def adaptation_data(ctx):
    """Strip ``beta_hat_j`` and ``sigma2_hat`` from a context."""
    return AdaptationData(ctx.j, ctx.w_j, ctx.z2, ctx.X2, ctx.spectrum)


def fast_adaptation_data(fit, j):
    """Adaptation data for coefficient ``j`` straight from the shared QR."""
    cm = fit.design.coefficient_map(j)
    return AdaptationData(j, float(fit.w[j]), cm.H.T @ fit.qty, cm.X2, cm.spectrum, cm.U)


def projection_matrices(data, fit, j):
    """Explicit ``(P0, P1, P2, a)`` for coefficient ``j`` (n x n; for checks)."""
    d = fit.design
    PX = d.Q @ d.Q.T
    a = d.Q @ d._Rinv[j]
    P1 = np.outer(a, a) / (a @ a)
    P2 = PX @ (np.eye(d.n) - P1)
    P0 = np.eye(d.n) - PX
    return P0, P1, P2, a


def coefficient_context(data, fit, j, method="fast"):
    """Build the context for coefficient ``j`` from ``P2 y``.

    ``method="direct"`` orthonormalises the range of the explicit ``P2``;
    ``method="fast"`` reuses the shared QR.  Both verify ``G2'G2 = I`` and
    ``a'G2 = 0``.
    """
    d = fit.design
    if not 0 <= j < d.p:
        raise IndexError(f"coefficient index {j} out of range for p={d.p}")
    a = d.Q @ d._Rinv[j]
    if d.p == 1:
        G2 = np.zeros((d.n, 0))
    elif method == "direct":
        _, _, P2, a = projection_matrices(data, fit, j)
        Qp, _, _ = sla.qr(P2, pivoting=True, mode="economic")
        G2 = Qp[:, :d.p - 1]
    elif method == "fast":
        G2 = d.Q @ d.coefficient_map(j).H
    else:
        raise ValueError(f"unknown method {method!r}")
    m = G2.shape[1]
    if m:
        ortho = np.abs(G2.T @ G2 - np.eye(m)).max()
        leak = np.abs(a @ G2).max() / np.linalg.norm(a)
        if ortho > ORTHO_TOL or leak > ORTHO_TOL:
            raise ArithmeticError(
                f"projection basis check failed for coefficient {j}: "
                f"|G2'G2 - I| = {ortho:.2e}, |a'G2|/|a| = {leak:.2e}")
    y = np.asarray(data.y, dtype=float)
    if method == "fast" and m:
        cm = d.coefficient_map(j)
        z2 = cm.H.T @ fit.qty
        X2 = cm.X2
        spectrum = cm.spectrum
    else:
        z2 = G2.T @ y
        X2 = G2.T @ d.X
        spectrum = np.sort(np.clip(np.linalg.eigvalsh(X2 @ X2.T), 0.0, None))[::-1] if m else np.zeros(0)
    return CoefficientContext(j=j, beta_hat_j=float(fit.beta_hat[j]), w_j=float(fit.w[j]),
                              sigma2_hat=float(fit.sigma2_hat), df=fit.df, z2=z2, X2=X2,
                              spectrum=spectrum, G2=G2)


def null_space_basis(A):
    """Orthonormal basis (n, n - k) of the null space of ``A'`` for ``A`` (n, k)."""
    A = np.asarray(A, dtype=float)
    n, k = A.shape
    if k == 0:
        return np.eye(n)
    check_rank(A)
    Qf, _ = np.linalg.qr(A, mode="complete")
    return Qf[:, k:]


def null_space_restrict(data, keep):
    """Project out the columns not in ``keep``.

    Returns ``(G'y, G'X_keep)`` where ``G`` spans the null space of the dropped
    columns, so the result follows ``N(G'X_keep beta_keep, sigma^2 I)``.
    """
    keep_idx = data.column_indices(keep)
    if not keep_idx:
        raise InputError("keep must name at least one column")
    drop_idx = [k for k in range(data.p) if k not in keep_idx]
    if not drop_idx:
        return data
    rows = data.n - len(drop_idx)
    if rows <= len(keep_idx):
        raise DimensionError(
            f"projecting out {len(drop_idx)} columns leaves {rows} rows for "
            f"{len(keep_idx)} kept columns; need more rows than columns")
    G = null_space_basis(data.X[:, drop_idx])
    return RegressionData(y=G.T @ data.y, X=G.T @ data.X[:, keep_idx],
                          names=tuple(data.names[k] for k in keep_idx),
                          standardize=data.standardize)


def standardize(data):
    """Centre and unit-scale the columns of X and centre y.

    Centring is done by rotating onto the complement of the intercept, which
    drops one row and keeps the residual degrees of freedom exact (n - p - 1).
    """
    X = data.X
    sd = X.std(axis=0, ddof=1)
    if np.any(sd == 0):
        bad = [data.names[k] for k in np.flatnonzero(sd == 0)]
        raise InputError(f"cannot standardize constant column(s): {', '.join(bad)}")
    if data.n - 1 <= data.p:
        raise DimensionError("standardizing needs n - 1 > p")
    G = null_space_basis(np.ones((data.n, 1)))
    Xs = (X - X.mean(axis=0)) / sd
    return RegressionData(y=G.T @ data.y, X=G.T @ Xs, names=data.names, standardize=True)
