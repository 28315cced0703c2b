"""Posterior update and baseline update against the quadrature oracle."""

import math

import numpy as np
import pytest

from probsdf import PsdfVoxel, SdfObservation, psdf_update, tsdf_update
from probsdf.psdf_fusion import AB_MAX, AB_MIN, SIGMA_FLOOR

from oracles import quad_filter_step, quad_posterior


def update(mu, sigma, a, b, d, tau, rho, band):
    v = PsdfVoxel(a=a, b=b, mu=mu, sigma=sigma)
    return psdf_update(v, SdfObservation(d_obs=d, tau=tau, rho=rho, band=band))


class TestPsdfUpdate:
    def test_symmetric_inlier_only(self):
        # pure-inlier observation at the prior mean: classic precision combine
        up = update(mu=0.0, sigma=1.0, a=1.0, b=1.0, d=0.0, tau=1.0,
                    rho=1.0, band=10.0)
        assert up.mu == pytest.approx(0.0, abs=1e-15)
        assert up.sigma ** 2 == pytest.approx(0.5, rel=1e-12)
        assert up.a == pytest.approx(2.0, rel=1e-9)   # a gains one inlier count
        assert up.b == pytest.approx(1.0, rel=1e-9)

    def test_worked_example_against_oracle(self):
        up = update(mu=0.0, sigma=0.02, a=1.0, b=1.0, d=0.05, tau=0.02,
                    rho=0.5, band=0.054)
        mom = quad_posterior(0.0, 0.02, 1.0, 1.0, 0.05, 0.02, 0.5, 0.054)
        assert up.mu == pytest.approx(mom["mean_d"], rel=1e-6)
        assert up.sigma ** 2 == pytest.approx(mom["var_d"], rel=1e-6)
        assert up.a / (up.a + up.b) == pytest.approx(mom["mean_pi"], rel=1e-6)
        # frozen oracle values (independent regression anchor)
        assert up.mu == pytest.approx(0.006050608, abs=1e-8)
        assert up.sigma == pytest.approx(0.021592834, abs=1e-8)
        assert up.a == pytest.approx(0.908645, abs=2e-6)
        assert up.b == pytest.approx(1.286107, abs=2e-6)

    def test_randomized_against_oracle(self):
        rng = np.random.default_rng(7)
        t = 0.054
        for _ in range(100):
            mu = rng.uniform(-t, t)
            sigma = rng.uniform(1e-3, t)
            a, b = rng.uniform(1, 50, size=2)
            d = rng.uniform(-t, t)
            tau = rng.uniform(1e-3, 0.03)
            rho = rng.uniform(0.05, 0.95)
            up = update(mu, sigma, a, b, d, tau, rho, t)
            mom = quad_posterior(mu, sigma, a, b, d, tau, rho, t)
            assert up.mu == pytest.approx(mom["mean_d"], rel=1e-5, abs=1e-10)
            assert up.sigma ** 2 == pytest.approx(mom["var_d"], rel=1e-5)
            assert up.a / (up.a + up.b) == pytest.approx(mom["mean_pi"], rel=1e-5)

    def test_sequential_convergence_matches_oracle_filter(self):
        # 50 consistent observations: mu converges to d, confidence grows
        band = 3 * (0.008 + 0.005)
        mu, sigma, a, b = 0.0, 0.008, 1.0, 1.0
        omu, osig, oa, ob = mu, sigma, a, b
        for _ in range(50):
            up = update(mu, sigma, a, b, d=0.01, tau=0.005, rho=0.9, band=band)
            mu, sigma, a, b = up.mu, up.sigma, up.a, up.b
            omu, osig, oa, ob = quad_filter_step(omu, osig, oa, ob,
                                                 0.01, 0.005, 0.9, band)
            assert mu == pytest.approx(omu, rel=1e-4, abs=1e-9)
            assert sigma == pytest.approx(osig, rel=1e-4)
            assert a / (a + b) == pytest.approx(oa / (oa + ob), rel=1e-4)
        assert abs(mu - 0.01) < 1e-3
        assert a / (a + b) > 0.8

    def test_variance_contraction_pure_inlier(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            sigma = rng.uniform(1e-3, 0.05)
            tau = rng.uniform(1e-3, 0.03)
            mu = rng.uniform(-0.05, 0.05)
            d = rng.uniform(-0.05, 0.05)
            up = update(mu, sigma, 5.0, 5.0, d, tau, rho=1.0, band=0.06)
            assert up.sigma <= sigma + 1e-15

    def test_variance_bounded_mixture_spread(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            sigma = rng.uniform(1e-3, 0.05)
            tau = rng.uniform(1e-3, 0.03)
            mu = rng.uniform(-0.05, 0.05)
            d = rng.uniform(-0.05, 0.05)
            rho = rng.uniform(0.05, 0.95)
            s2 = 1.0 / (1.0 / sigma ** 2 + 1.0 / tau ** 2)
            m = s2 * (mu / sigma ** 2 + d / tau ** 2)
            up = update(mu, sigma, 5.0, 5.0, d, tau, rho, band=0.06)
            assert up.sigma ** 2 <= sigma ** 2 + (mu - m) ** 2 + s2 + 1e-15

    def test_normalization_inside_update(self):
        # posterior mean is a convex combination of m and the prior mean,
        # which pins C1' + C2' = 1 after normalization
        up = update(mu=-0.02, sigma=0.01, a=3, b=2, d=0.02, tau=0.01,
                    rho=0.3, band=0.054)
        s2 = 1.0 / (1.0 / 0.01 ** 2 + 1.0 / 0.01 ** 2)
        m = s2 * (-0.02 / 0.01 ** 2 + 0.02 / 0.01 ** 2)
        lo, hi = min(m, -0.02), max(m, -0.02)
        assert lo - 1e-12 <= up.mu <= hi + 1e-12

    def test_mu_stays_inside_band(self):
        rng = np.random.default_rng(5)
        band = 0.03
        mu, sigma, a, b = 0.0, 0.008, 1.0, 1.0
        for _ in range(300):
            d = rng.uniform(-band, band)
            tau = rng.uniform(1e-3, 0.01)
            up = update(mu, sigma, a, b, d, tau, rng.uniform(0, 1), band)
            mu, sigma, a, b = up.mu, up.sigma, up.a, up.b
            assert abs(mu) <= band
            assert sigma >= SIGMA_FLOOR
            assert AB_MIN <= a <= AB_MAX and AB_MIN <= b <= AB_MAX

    def test_outlier_insensitivity_vs_baseline(self):
        # 80% on-surface observations, 20% uniform outliers: the posterior
        # mean stays near zero while the weighted average is pulled away
        rng = np.random.default_rng(11)
        band = 3 * (0.008 + 0.01)
        v = PsdfVoxel(a=1.0, b=1.0, mu=0.0, sigma=0.008)
        for _ in range(200):
            if rng.random() < 0.8:
                obs = SdfObservation(d_obs=0.0, tau=0.01, rho=0.9, band=band)
            else:
                obs = SdfObservation(d_obs=rng.uniform(-band, band), tau=0.01,
                                     rho=0.1, band=band)
            v = psdf_update(v, obs)
            v = tsdf_update(v, obs)
        assert abs(v.mu) < 0.005
        assert abs(v.tsdf_value) > abs(v.mu)

    def test_tsdf_equivalence_on_clean_data(self):
        # rho = 1, constant small tau: both estimates converge to the data
        v = PsdfVoxel(a=1.0, b=1.0, mu=0.0, sigma=0.008)
        obs = SdfObservation(d_obs=0.01, tau=0.002, rho=1.0, band=0.05)
        for _ in range(100):
            v = psdf_update(v, obs)
            v = tsdf_update(v, obs)
        assert abs(v.mu - v.tsdf_value) < 1e-3

    def test_sigma_floor_clamps(self):
        up = update(mu=0.0, sigma=1e-9, a=2, b=2, d=0.0, tau=1e-3,
                    rho=0.9, band=0.05)
        assert up.sigma >= SIGMA_FLOOR

    def test_rejects_bad_observation(self):
        with pytest.raises(ValueError):
            SdfObservation(d_obs=0.1, tau=0.01, rho=0.5, band=0.05)
        with pytest.raises(ValueError):
            SdfObservation(d_obs=0.0, tau=-1.0, rho=0.5, band=0.05)
        with pytest.raises(ValueError):
            SdfObservation(d_obs=0.0, tau=0.01, rho=1.5, band=0.05)


class TestTsdfUpdate:
    def test_first_sample_identity(self):
        v = tsdf_update(PsdfVoxel(), SdfObservation(0.02, 0.01, 1.0, 0.05))
        assert v.tsdf_value == pytest.approx(0.02)
        assert v.tsdf_weight == 1.0

    def test_two_sample_mean(self):
        v = PsdfVoxel(tsdf_value=0.02, tsdf_weight=1.0)
        v = tsdf_update(v, SdfObservation(0.04, 0.01, 1.0, 0.05))
        assert v.tsdf_value == pytest.approx(0.03)
        assert v.tsdf_weight == 2.0

    def test_weight_cap(self):
        v = PsdfVoxel()
        obs = SdfObservation(0.01, 0.01, 1.0, 0.05)
        for _ in range(255):
            v = tsdf_update(v, obs)
        assert v.tsdf_weight == 255.0
        before = v.tsdf_value
        v = tsdf_update(v, SdfObservation(0.03, 0.01, 1.0, 0.05))
        assert v.tsdf_weight == 255.0
        assert abs(v.tsdf_value - before) <= abs(0.03 - before) / 256 + 1e-15

    def test_does_not_touch_posterior_fields(self):
        v = PsdfVoxel(a=3, b=4, mu=0.01, sigma=0.005)
        v2 = tsdf_update(v, SdfObservation(0.02, 0.01, 1.0, 0.05))
        assert (v2.a, v2.b, v2.mu, v2.sigma) == (3, 4, 0.01, 0.005)

    def test_psdf_does_not_touch_baseline_fields(self):
        v = PsdfVoxel(tsdf_value=0.02, tsdf_weight=7.0)
        v2 = psdf_update(v, SdfObservation(0.01, 0.01, 0.5, 0.05))
        assert (v2.tsdf_value, v2.tsdf_weight) == (0.02, 7.0)
