"""Prior estimation from the adaptation vector z2.

Under ``beta ~ N(mu 1, tau2 I)`` the adaptation vector has marginal law

    z2 ~ N(X2 1 mu, tau2 X2 X2' + sigma2 I).

Rotating by the eigenvectors ``U`` of ``X2 X2'`` diagonalises the covariance,
so with ``r = U' z2`` and ``d = U' X2 1`` the coordinates are independent
``N(d_i mu, lam_i tau2 + sigma2)``.  Both estimators below work only with
``(lam, r, d)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import EmptyContextError, InputError, OptimizerError, SingularMomentSystemError

MOMENT = "MOMENT"
MLE = "MLE"

UNIDENTIFIED = "tau2_unidentified"
RIDGE = "ridge"
CLAMPED = "clamped"

TAU2_SPAN = 1e6
SIGMA2_FLOOR = 1e-8
SINGULAR_TOL = 1e-10
GTOL = 1e-7
MAXITER = 500


@dataclass(frozen=True)
class MarginalModel:
    z2: np.ndarray
    spectrum: np.ndarray
    rotated: np.ndarray
    mean_design: np.ndarray = None

    @property
    def m(self):
        return self.rotated.shape[0]

    @property
    def scale(self):
        """Mean square of z2, the unit for the default box (1 if z2 is zero)."""
        c = float(np.mean(self.rotated ** 2)) if self.m else 0.0
        return c if c > 0 and math.isfinite(c) else 1.0


@dataclass(frozen=True)
class Box:
    """Compact search region ``[0, tau2_max] x [sigma2_min, sigma2_max]``."""

    tau2_max: float
    sigma2_min: float
    sigma2_max: float

    def __post_init__(self):
        if not (self.tau2_max > 0 and 0 < self.sigma2_min < self.sigma2_max):
            raise InputError(f"invalid box {self}")

    def contains(self, tau2, sigma2):
        return 0.0 <= tau2 <= self.tau2_max and self.sigma2_min <= sigma2 <= self.sigma2_max

    def clamp(self, tau2, sigma2):
        return (min(max(tau2, 0.0), self.tau2_max),
                min(max(sigma2, self.sigma2_min), self.sigma2_max))

    def as_tuple(self):
        return (0.0, self.tau2_max, self.sigma2_min, self.sigma2_max)


def default_box(mm):
    c = mm.scale
    return Box(TAU2_SPAN * c, SIGMA2_FLOOR * c, TAU2_SPAN * c)


@dataclass(frozen=True)
class PriorEstimate:
    mu: float
    tau2: float
    sigma2: float
    method: str
    objective: float = None
    box: Box = None
    flags: frozenset = frozenset()
    raw: tuple = field(default=None, repr=False)
    iterations: int = 0


def marginal_from_parts(z2, U, spectrum, X2=None, with_mean=False):
    rotated = U.T @ z2
    d = U.T @ (X2 @ np.ones(X2.shape[1])) if with_mean else None
    return MarginalModel(z2=z2, spectrum=spectrum, rotated=rotated, mean_design=d)


def build_marginal(ctx, with_mean=False):
    """Eigen-reduce ``X2 X2'`` of a coefficient context or its adaptation data."""
    if ctx.z2.shape[0] == 0:
        raise EmptyContextError(
            f"coefficient {ctx.j} has no adaptation data (p = 1); use the UMAU interval")
    X2 = np.asarray(ctx.X2, dtype=float)
    U = getattr(ctx, "U", None)
    if U is not None:
        return marginal_from_parts(np.asarray(ctx.z2, dtype=float), U, ctx.spectrum, X2, with_mean)
    U, sv, _ = np.linalg.svd(X2, full_matrices=True)
    lam = np.zeros(X2.shape[0])
    lam[:sv.size] = sv * sv
    K = X2 @ X2.T
    err = np.abs((U * lam) @ U.T - K).max()
    norm = np.abs(K).max()
    if err > 1e-8 * max(norm, 1.0):
        raise ArithmeticError(f"eigendecomposition of X2 X2' lost accuracy ({err:.2e})")
    return marginal_from_parts(np.asarray(ctx.z2, dtype=float), U, lam, X2, with_mean)


def _degeneracy(lam):
    if lam.size == 0 or not np.any(lam > 0):
        return UNIDENTIFIED
    spread = float(np.var(lam))
    if spread <= SINGULAR_TOL * float(np.mean(lam)) ** 2:
        return RIDGE
    return None


def moment_estimate(mm, box=None):
    """Unbiased moment estimates of ``(tau2, sigma2)`` with mean zero.

    Uses the quadratic forms ``z'z`` and ``z' X2 X2' z``:

        [sum lam    m      ] [tau2  ]   [sum r^2      ]
        [sum lam^2  sum lam] [sigma2] = [sum lam r^2  ]
    """
    lam = np.asarray(mm.spectrum, dtype=float)
    r2 = np.asarray(mm.rotated, dtype=float) ** 2
    m = lam.size
    if m == 0:
        raise EmptyContextError("no adaptation data")
    s1, s2 = float(lam.sum()), float((lam * lam).sum())
    det = s1 * s1 - m * s2
    rel = abs(det) / (m * s2) if s2 > 0 else 0.0
    if rel <= SINGULAR_TOL:
        raise SingularMomentSystemError(rel)
    b1, b2 = float(r2.sum()), float((lam * r2).sum())
    tau2 = (s1 * b1 - m * b2) / det
    sigma2 = (s1 * b2 - s2 * b1) / det
    box = box or default_box(mm)
    ct, cs = box.clamp(tau2, sigma2)
    flags = frozenset({CLAMPED}) if (ct, cs) != (tau2, sigma2) else frozenset()
    return PriorEstimate(0.0, ct, cs, MOMENT, None, box, flags, raw=(tau2, sigma2))


def _mle(mm, box, d, gtol, maxiter):
    lam = np.ascontiguousarray(mm.spectrum, dtype=float)
    if lam.size == 0:
        raise EmptyContextError("no adaptation data")
    box = box or default_box(mm)
    c = mm.scale
    rc = math.sqrt(c)
    z = np.ascontiguousarray(mm.rotated, dtype=float) / rc
    tau2, sigma2, mu, nll, iters, status, seed_nll = kernels.marginal_mle(
        z, lam, d, box.tau2_max / c, box.sigma2_min / c, box.sigma2_max / c, gtol, maxiter)
    if status != 0 or not math.isfinite(nll):
        tg, sg = kernels.seed_grid(box.tau2_max / c, box.sigma2_min / c, box.sigma2_max / c)
        trace = [(t * c, s * c, kernels.marginal_nll(z, lam, d, t, s, 0.0) + math.log(c))
                 for t in tg for s in sg]
        raise OptimizerError(
            f"marginal likelihood optimisation did not converge (status {status}, "
            f"{iters} iterations, objective {nll + math.log(c):.6g})", trace)
    flags = set()
    kind = _degeneracy(lam)
    if kind:
        flags.add(kind)
    return PriorEstimate(mu * rc, tau2 * c, sigma2 * c, MLE, nll + math.log(c), box,
                         frozenset(flags), iterations=iters)


def mle_estimate(mm, box=None, gtol=GTOL, maxiter=MAXITER):
    """Box-constrained marginal MLE of ``(tau2, sigma2)`` with mean zero.

    Minimises ``Q(tau2, sigma2) = mean(r_i^2 / v_i + log v_i)``,
    ``v_i = lam_i tau2 + sigma2``, from the best point of a 16 x 16 seed grid.
    """
    return _mle(mm, box, None, gtol, maxiter)


def mle_estimate_with_mean(mm, box=None, gtol=GTOL, maxiter=MAXITER):
    """As :func:`mle_estimate` with the prior mean profiled out by weighted
    least squares at every ``(tau2, sigma2)``."""
    if mm.mean_design is None:
        raise InputError("marginal model was built without the mean design")
    d = np.ascontiguousarray(mm.mean_design, dtype=float)
    return _mle(mm, box, d, gtol, maxiter)


def negative_log_likelihood(mm, tau2, sigma2, mu=0.0):
    """Mean negative log-likelihood (without the log 2 pi constant)."""
    d = None if mm.mean_design is None else np.asarray(mm.mean_design, dtype=float)
    return kernels.marginal_nll(np.asarray(mm.rotated, dtype=float),
                                np.asarray(mm.spectrum, dtype=float), d, tau2, sigma2, mu)
