import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fabreg._backend import kernels
from fabreg.empirical_bayes import (CLAMPED, MLE, MOMENT, RIDGE, UNIDENTIFIED, Box, MarginalModel,
                                    build_marginal, default_box, mle_estimate,
                                    mle_estimate_with_mean, moment_estimate,
                                    negative_log_likelihood)
from fabreg.errors import EmptyContextError, InputError, SingularMomentSystemError
from fabreg.ols import AdaptationData, Design, fast_adaptation_data


def diagonal(rng, lam, tau2, sigma2, mu=0.0, d=None):
    v = lam * tau2 + sigma2
    mean = 0.0 if d is None else d * mu
    r = mean + np.sqrt(v) * rng.standard_normal(lam.size)
    return MarginalModel(z2=r, spectrum=lam, rotated=r, mean_design=d)


def dense_nll(z2, X2, tau2, sigma2, mu=0.0):
    m = z2.size
    S = tau2 * X2 @ X2.T + sigma2 * np.eye(m)
    e = z2 - mu * X2 @ np.ones(X2.shape[1])
    _, logdet = np.linalg.slogdet(S)
    return (e @ np.linalg.solve(S, e) + logdet) / m


def gradient(mm, tau2, sigma2):
    v = mm.spectrum * tau2 + sigma2
    q = 1 / v - mm.rotated ** 2 / v ** 2
    return np.mean(mm.spectrum * q), np.mean(q)


def adaptation(z2, X2):
    return AdaptationData(j=0, w_j=1.0, z2=z2, X2=X2, spectrum=np.linalg.svd(X2, compute_uv=False) ** 2)


class TestBuildMarginal:
    def test_zero_design(self, rng):
        mm = build_marginal(adaptation(rng.standard_normal(5), np.zeros((5, 6))))
        assert np.all(mm.spectrum == 0)
        assert np.linalg.norm(mm.rotated) == pytest.approx(np.linalg.norm(mm.z2), abs=1e-8)

    def test_orthonormal_rows(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((9, 4)))
        mm = build_marginal(adaptation(rng.standard_normal(4), Q.T))
        np.testing.assert_allclose(mm.spectrum, 1.0, atol=1e-12)

    def test_dense_eigen_oracle(self, rng):
        X2 = rng.standard_normal((8, 10))
        mm = build_marginal(adaptation(rng.standard_normal(8), X2))
        ref = np.sort(np.linalg.eigvalsh(X2 @ X2.T))[::-1]
        np.testing.assert_allclose(mm.spectrum, ref, atol=1e-8)
        assert np.all(np.diff(mm.spectrum) <= 0)

    def test_wide_rank_deficient(self, rng):
        # more rows than columns: trailing eigenvalues are zero
        X2 = rng.standard_normal((7, 3))
        mm = build_marginal(adaptation(rng.standard_normal(7), X2), with_mean=True)
        assert mm.spectrum.shape == (7,)
        np.testing.assert_allclose(mm.spectrum[3:], 0.0, atol=1e-12)
        assert mm.mean_design.shape == (7,)

    def test_empty(self):
        with pytest.raises(EmptyContextError):
            build_marginal(adaptation(np.zeros(0), np.zeros((0, 1))))

    def test_fast_path_basis(self, rng):
        X = rng.standard_normal((30, 6))
        fit = Design(X).fit(rng.standard_normal(30))
        ad = fast_adaptation_data(fit, 2)
        a = build_marginal(ad, with_mean=True)
        b = build_marginal(AdaptationData(ad.j, ad.w_j, ad.z2, ad.X2, ad.spectrum), with_mean=True)
        np.testing.assert_allclose(a.spectrum, b.spectrum, atol=1e-10)
        for t, s, mu in ((0.3, 1.2, 0.0), (2.0, 0.4, -0.7)):
            assert negative_log_likelihood(a, t, s, mu) == pytest.approx(
                negative_log_likelihood(b, t, s, mu), rel=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(m=st.integers(1, 20), k=st.integers(1, 20), seed=st.integers(0, 2**32 - 1),
           tau2=st.floats(0.0, 10.0), sigma2=st.floats(0.01, 10.0), mu=st.floats(-3, 3))
    def test_property_rotation_preserves_likelihood(self, m, k, seed, tau2, sigma2, mu):
        rng = np.random.default_rng(seed)
        X2 = rng.standard_normal((m, k))
        z2 = rng.standard_normal(m) * 2
        mm = build_marginal(adaptation(z2, X2), with_mean=True)
        assert np.linalg.norm(mm.rotated) == pytest.approx(np.linalg.norm(z2), abs=1e-8)
        got = negative_log_likelihood(mm, tau2, sigma2, mu)
        assert got == pytest.approx(dense_nll(z2, X2, tau2, sigma2, mu), abs=1e-8)


class TestMoment:
    def test_zero_tau2(self, rng):
        lam = rng.uniform(0, 2, 20000)
        mm = diagonal(rng, lam, 0.0, 2.5)
        est = moment_estimate(mm)
        assert est.method == MOMENT
        assert est.sigma2 == pytest.approx(np.mean(mm.rotated ** 2), abs=0.1)
        assert abs(est.raw[0]) < 0.1

    def test_unbiased(self):
        rng = np.random.default_rng(17)
        lam = rng.uniform(0, 2, 500)
        reps = np.array([moment_estimate(diagonal(rng, lam, 1.0, 2.0)).raw for _ in range(2000)])
        mean, se = reps.mean(0), reps.std(0, ddof=1) / math.sqrt(2000)
        assert abs(mean[0] - 1.0) < 2 * se[0]
        assert abs(mean[1] - 2.0) < 2 * se[1]

    def test_equal_spectrum_is_singular(self, rng):
        with pytest.raises(SingularMomentSystemError):
            moment_estimate(diagonal(rng, np.full(30, 1.7), 1.0, 1.0))

    def test_negative_clamped(self):
        # data far below the noise floor drive the raw tau2 negative
        lam = np.linspace(0.1, 5, 40)
        r = np.where(lam > 2.5, 0.01, 2.0)
        est = moment_estimate(MarginalModel(r, lam, r))
        assert est.raw[0] < 0
        assert est.tau2 == 0.0 and CLAMPED in est.flags
        assert est.box.contains(est.tau2, est.sigma2)

    def test_closed_form(self, rng):
        lam = rng.uniform(0, 3, 12)
        r = rng.standard_normal(12)
        est = moment_estimate(MarginalModel(r, lam, r))
        t, s = est.raw
        # both quadratic-form equations hold at the raw solution
        assert np.sum(r ** 2) == pytest.approx(t * lam.sum() + s * 12, rel=1e-10)
        assert np.sum(lam * r ** 2) == pytest.approx(t * np.sum(lam ** 2) + s * lam.sum(), rel=1e-10)


class TestMle:
    def test_zero_spectrum(self, rng):
        mm = diagonal(rng, np.zeros(50), 1.0, 2.0)
        est = mle_estimate(mm)
        assert est.method == MLE and UNIDENTIFIED in est.flags
        assert est.tau2 == 0.0
        assert est.sigma2 == pytest.approx(np.mean(mm.rotated ** 2), rel=1e-6)

    def test_equal_spectrum_ridge(self, rng):
        est = mle_estimate(diagonal(rng, np.full(40, 2.0), 1.0, 1.0))
        assert RIDGE in est.flags
        assert est.box.contains(est.tau2, est.sigma2)

    def test_median_accuracy(self):
        rng = np.random.default_rng(23)
        lam = rng.uniform(0, 20, 2000)
        ests = [mle_estimate(diagonal(rng, lam, 0.5, 3.0)) for _ in range(25)]
        assert abs(np.median([e.tau2 for e in ests]) / 0.5 - 1) < 0.1
        assert abs(np.median([e.sigma2 for e in ests]) / 3.0 - 1) < 0.1

    def test_minimiser_properties(self):
        rng = np.random.default_rng(29)
        for _ in range(40):
            m = int(rng.integers(3, 300))
            lam = rng.uniform(0, 4, m)
            mm = diagonal(rng, lam, rng.uniform(0, 2), rng.uniform(0.2, 3))
            est = mle_estimate(mm)
            box = est.box
            assert box.contains(est.tau2, est.sigma2)
            q = negative_log_likelihood(mm, est.tau2, est.sigma2)
            assert est.objective == pytest.approx(q, abs=1e-12)
            # no greater than any seed of the grid
            c = mm.scale
            tg, sg = kernels.seed_grid(box.tau2_max / c, box.sigma2_min / c, box.sigma2_max / c)
            seeds = min(negative_log_likelihood(mm, t * c, s * c) for t in tg for s in sg)
            assert q <= seeds + 1e-12
            # projected gradient in the box's scaled units
            gt, gs = gradient(mm, est.tau2, est.sigma2)
            gt, gs = gt * c, gs * c
            if est.tau2 == 0.0:
                gt = min(gt, 0.0)
            if est.sigma2 == box.sigma2_min:
                gs = min(gs, 0.0)
            assert math.hypot(gt, gs) <= 1e-6

    def test_not_worse_than_truth(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            lam = rng.uniform(0, 2, 100)
            mm = diagonal(rng, lam, 0.5, 3.0)
            est = mle_estimate(mm)
            assert est.objective <= negative_log_likelihood(mm, 0.5, 3.0) + 1e-12

    def test_scale_equivariance(self, rng):
        lam = rng.uniform(0, 3, 80)
        mm = diagonal(rng, lam, 0.7, 1.3)
        a = mle_estimate(mm)
        k = 1e3
        b = mle_estimate(MarginalModel(mm.z2 * k, lam, mm.rotated * k))
        assert b.tau2 == pytest.approx(a.tau2 * k * k, rel=1e-6)
        assert b.sigma2 == pytest.approx(a.sigma2 * k * k, rel=1e-6)

    def test_custom_box(self, rng):
        lam = rng.uniform(0, 3, 200)
        mm = diagonal(rng, lam, 2.0, 1.0)
        box = Box(0.5, 0.1, 10.0)
        est = mle_estimate(mm, box)
        assert est.tau2 == pytest.approx(0.5)
        with pytest.raises(InputError):
            Box(1.0, 0.0, 1.0)

    def test_default_box_scale(self, rng):
        mm = diagonal(rng, rng.uniform(0, 1, 30), 1.0, 1.0)
        box = default_box(mm)
        c = np.mean(mm.rotated ** 2)
        assert box.tau2_max == pytest.approx(1e6 * c) and box.sigma2_min == pytest.approx(1e-8 * c)


class TestMleWithMean:
    def test_zero_design_reduces(self, rng):
        lam = rng.uniform(0, 2, 60)
        mm = diagonal(rng, lam, 0.4, 1.0, d=np.zeros(60))
        a = mle_estimate_with_mean(mm)
        b = mle_estimate(mm)
        assert a.mu == 0.0
        assert a.tau2 == pytest.approx(b.tau2, rel=1e-8, abs=1e-12)
        assert a.sigma2 == pytest.approx(b.sigma2, rel=1e-8)

    def test_requires_mean_design(self, rng):
        with pytest.raises(InputError):
            mle_estimate_with_mean(diagonal(rng, np.ones(3) * [1, 2, 3], 1.0, 1.0))

    def test_recovers_mu(self):
        rng = np.random.default_rng(37)
        m, reps = 200, 200
        lam = rng.uniform(0, 4, m)
        d = rng.standard_normal(m) * np.sqrt(lam)
        mus = np.array([mle_estimate_with_mean(diagonal(rng, lam, 0.5, 1.0, 0.4, d)).mu
                        for _ in range(reps)])
        assert abs(mus.mean() - 0.4) < 3 * mus.std(ddof=1) / math.sqrt(reps)

    def test_profiled_mu_is_weighted_ls(self, rng):
        lam = rng.uniform(0, 4, 50)
        d = rng.standard_normal(50)
        mm = diagonal(rng, lam, 0.5, 1.0, 0.8, d)
        est = mle_estimate_with_mean(mm)
        v = lam * est.tau2 + est.sigma2
        assert est.mu == pytest.approx(np.sum(d * mm.rotated / v) / np.sum(d * d / v), rel=1e-8)


@pytest.mark.slow
def test_independent_of_beta_hat():
    rng = np.random.default_rng(41)
    n, p, j, sims = 40, 8, 3, 5000
    X = rng.standard_normal((n, p))
    design = Design(X)
    beta = rng.standard_normal(p) * 0.7
    bh = np.empty(sims)
    t2 = np.empty(sims)
    for k in range(sims):
        fit = design.fit(X @ beta + rng.standard_normal(n))
        bh[k] = fit.beta_hat[j]
        t2[k] = mle_estimate(build_marginal(fast_adaptation_data(fit, j))).tau2
    assert abs(np.corrcoef(bh, t2)[0, 1]) < 4 / math.sqrt(sims)
