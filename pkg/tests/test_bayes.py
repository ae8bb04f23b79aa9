import math

import numpy as np
import pytest
from scipy import stats

from bayes.random import BOOTSTRAP, NOISE, stream, stream_key
from bayes.regression import (
    AffineMap,
    LinearSystem,
    PosteriorT,
    fit_posterior,
    fitted_values,
    gaussian_posterior,
    marginal,
    posterior_means,
    pushforward_affine,
    residual_covariance,
    residual_covariance_diagonal,
    sample_posterior,
    smoother_matrix,
    variance_posterior,
)
from bayes.student import UnivariateT, t_cdf, t_quantile
from errors import (
    CovarianceUndefinedError,
    DegenerateDofError,
    InvalidSystemError,
    SingularSystemError,
    UsageError,
)


class TestRandom:
    def test_same_keys_same_stream(self):
        a = stream(3, NOISE, 17).standard_normal(5)
        b = stream(3, NOISE, 17).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_separate_streams(self):
        a = stream(3, NOISE, 17).standard_normal(5)
        assert not np.array_equal(a, stream(3, NOISE, 18).standard_normal(5))
        assert not np.array_equal(a, stream(3, BOOTSTRAP, 17).standard_normal(5))
        assert not np.array_equal(a, stream(4, NOISE, 17).standard_normal(5))

    def test_stream_key(self):
        assert stream_key(5, 1, 2) == (5, 1, 2)


class TestStudentT:
    def test_median_is_location(self):
        assert t_quantile(0.5, UnivariateT(2.5, 3.0, 4.0)) == 2.5

    def test_cauchy_quartile(self):
        assert t_quantile(0.75, UnivariateT(0.0, 1.0, 1.0)) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("dof", [3.0, 4.0, 30.0, 300.0])
    @pytest.mark.parametrize("p", [0.01, 0.1, 0.25, 0.5, 0.9, 0.99])
    def test_roundtrip(self, p, dof):
        dist = UnivariateT(1.0, 2.0, dof)
        assert t_cdf(t_quantile(p, dist), dist) == pytest.approx(p, abs=1e-10)

    @pytest.mark.parametrize("dof", [1.5, 4.0, 50.0])
    def test_matches_scipy(self, dof):
        dist = UnivariateT(-1.0, 0.5, dof)
        for p in (0.001, 0.2, 0.7, 0.999):
            assert dist.quantile(p) == pytest.approx(stats.t.ppf(p, dof, loc=-1.0, scale=0.5), rel=1e-9)
            x = dist.quantile(p)
            assert dist.cdf(x) == pytest.approx(stats.t.cdf(x, dof, loc=-1.0, scale=0.5), abs=1e-12)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_probability_out_of_range(self, p):
        with pytest.raises(UsageError):
            t_quantile(p, UnivariateT(0.0, 1.0, 3.0))

    def test_point_mass(self):
        dist = UnivariateT(2.0, 0.0, 5.0)
        assert dist.quantile(0.1) == 2.0
        assert dist.cdf(1.999) == 0.0
        assert dist.cdf(2.0) == 1.0

    def test_interval_symmetric(self):
        lo, hi = UnivariateT(1.0, 2.0, 6.0).interval(0.9)
        assert 1.0 - lo == pytest.approx(hi - 1.0, rel=1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidSystemError):
            UnivariateT(0.0, -1.0, 3.0)
        with pytest.raises(InvalidSystemError):
            UnivariateT(0.0, 1.0, 0.0)


class TestLinearSystem:
    def test_length_mismatch(self):
        with pytest.raises(InvalidSystemError):
            LinearSystem.ordinary(np.ones((3, 1)), np.ones(4))

    def test_nonpositive_weight(self):
        with pytest.raises(InvalidSystemError):
            LinearSystem(np.ones((3, 1)), np.array([1.0, 0.0, 1.0]), np.zeros((1, 1)), np.ones(3))

    def test_full_precision_not_pd(self):
        w = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(InvalidSystemError):
            LinearSystem(np.ones((2, 1)), w, np.zeros((1, 1)), np.ones(2))

    def test_regularizer_not_psd(self):
        with pytest.raises(InvalidSystemError):
            LinearSystem(np.eye(3)[:, :2], np.ones(3), np.diag([1.0, -1.0]), np.ones(3))

    def test_arrays_frozen(self, constant_system):
        with pytest.raises(ValueError):
            constant_system.observations[0] = 9.0


class TestFitPosterior:
    def test_constant_model(self, constant_system):
        post = fit_posterior(constant_system)
        assert post.mean[0] == pytest.approx(3.0, abs=1e-12)
        assert post.dof == pytest.approx(4.0, abs=1e-12)
        assert post.sigma2_hat == pytest.approx(2.5, abs=1e-12)
        assert post.scale[0, 0] == pytest.approx(0.25, abs=1e-12)
        assert post.covariance()[0, 0] == pytest.approx(0.5, abs=1e-12)
        assert not post.heavy_tailed

    def test_noiseless_recovers_coefficients(self):
        rng = np.random.default_rng(0)
        design = rng.normal(size=(12, 4))
        c = np.array([1.0, -2.0, 0.5, 3.0])
        post = fit_posterior(LinearSystem.ordinary(design, design @ c))
        np.testing.assert_allclose(post.mean, c, atol=1e-10)
        assert post.sigma2_hat <= 1e-20

    def test_ols_dof(self, random_system):
        assert fit_posterior(random_system).dof == pytest.approx(14.0, abs=1e-10)

    @pytest.mark.parametrize("n,d", [(5, 1), (30, 7), (120, 20), (200, 3)])
    def test_ols_dof_random_sizes(self, n, d):
        rng = np.random.default_rng(n * 100 + d)
        post = fit_posterior(LinearSystem.ordinary(rng.normal(size=(n, d)), rng.normal(size=n)))
        assert post.dof == pytest.approx(n - d, abs=1e-8)

    def test_covariance_identity(self, weighted_system):
        post = fit_posterior(weighted_system)
        assert post.dof > 2.0
        q_inv = np.linalg.inv(post.q_matrix())
        np.testing.assert_allclose(post.covariance(), post.sigma2_hat * q_inv, rtol=1e-10, atol=1e-14)

    def test_singular(self):
        design = np.column_stack([np.ones(6), np.ones(6)])
        with pytest.raises(SingularSystemError) as info:
            fit_posterior(LinearSystem.ordinary(design, np.arange(6.0)))
        assert info.value.condition is not None

    def test_degenerate_dof(self):
        with pytest.raises(DegenerateDofError):
            fit_posterior(LinearSystem.ordinary(np.eye(3), np.array([1.0, 2.0, 3.0])))

    def test_heavy_tailed(self):
        design = np.column_stack([np.ones(3), np.arange(3.0)])
        post = fit_posterior(LinearSystem.ordinary(design, np.array([0.0, 2.0, 1.0])))
        assert post.dof == pytest.approx(1.0)
        assert post.heavy_tailed
        q_inv = np.linalg.inv(post.q_matrix())
        np.testing.assert_allclose(post.scale, post.sigma2_hat * q_inv, rtol=1e-10)
        with pytest.raises(CovarianceUndefinedError):
            post.covariance()

    def test_weight_rescaling_invariance(self, weighted_system):
        base = fit_posterior(weighted_system)
        scaled = fit_posterior(
            LinearSystem(weighted_system.design, 7.0 * weighted_system.precision, weighted_system.regularizer, weighted_system.observations)
        )
        np.testing.assert_allclose(scaled.mean, base.mean, rtol=1e-10)
        assert scaled.dof == pytest.approx(base.dof, rel=1e-10)
        np.testing.assert_allclose(scaled.scale, base.scale, rtol=1e-10)
        assert scaled.sigma2_hat == pytest.approx(7.0 * base.sigma2_hat, rel=1e-10)

    def test_full_precision_matches_diagonal(self, weighted_system):
        full = LinearSystem(
            weighted_system.design, np.diag(weighted_system.precision), weighted_system.regularizer, weighted_system.observations
        )
        a, b = fit_posterior(weighted_system), fit_posterior(full)
        np.testing.assert_allclose(b.mean, a.mean, rtol=1e-10)
        assert b.dof == pytest.approx(a.dof, rel=1e-10)

    def test_sigma2_unbiased_under_gaussian_noise(self):
        rng = np.random.default_rng(21)
        n, d, sigma = 12, 3, 0.3
        design = rng.normal(size=(n, d))
        w = rng.uniform(0.5, 2.0, size=n)
        c = rng.normal(size=d)
        reps = 2000
        values = np.empty(reps)
        for r in range(reps):
            y = design @ c + sigma * rng.standard_normal(n) / np.sqrt(w)
            values[r] = fit_posterior(LinearSystem(design, w, np.zeros((d, d)), y)).sigma2_hat
        se = values.std(ddof=1) / math.sqrt(reps)
        assert abs(values.mean() - sigma ** 2) < 4.0 * se


class TestSmoother:
    def test_constant_projection(self, constant_system):
        h = smoother_matrix(constant_system, fit_posterior(constant_system))
        np.testing.assert_allclose(h, np.full((5, 5), 0.2), atol=1e-12)

    def test_idempotent_and_reproduces_fit(self, random_system):
        post = fit_posterior(random_system)
        h = smoother_matrix(random_system, post)
        assert np.max(np.abs(h @ h - h)) <= 1e-10
        np.testing.assert_allclose(h @ random_system.observations, fitted_values(random_system, post), atol=1e-10)

    def test_ridge_shrinks_trace(self):
        design = np.vstack([np.diag([3.0, 1.0]), np.zeros((3, 2))])
        sys = LinearSystem(design, np.ones(5), np.diag([1.0, 2.0]), np.array([1.0, 1.0, 0.5, -0.5, 0.2]))
        h = smoother_matrix(sys, fit_posterior(sys))
        assert np.trace(h) == pytest.approx(9.0 / 10.0 + 1.0 / 3.0, abs=1e-12)
        assert np.trace(h) < 2.0


class TestResidualCovariance:
    def test_unregularized_diagonal_w(self, weighted_system):
        post = fit_posterior(weighted_system)
        h = smoother_matrix(weighted_system, post)
        expected = (np.eye(weighted_system.n) - h) @ np.diag(1.0 / weighted_system.precision)
        np.testing.assert_allclose(residual_covariance(weighted_system, post), expected, atol=1e-10)

    def test_unregularized_full_w(self):
        rng = np.random.default_rng(5)
        design = rng.normal(size=(10, 3))
        a = rng.normal(size=(10, 10))
        w = a @ a.T + 10.0 * np.eye(10)
        sys = LinearSystem(design, w, np.zeros((3, 3)), rng.normal(size=10))
        post = fit_posterior(sys)
        h = smoother_matrix(sys, post)
        expected = (np.eye(10) - h) @ np.linalg.inv(w)
        np.testing.assert_allclose(residual_covariance(sys, post), expected, atol=1e-10)

    def test_diagonal_shortcut(self):
        rng = np.random.default_rng(9)
        design = rng.normal(size=(14, 5))
        sys = LinearSystem(design, rng.uniform(0.2, 3.0, size=14), 0.5 * np.eye(5), rng.normal(size=14))
        post = fit_posterior(sys)
        np.testing.assert_allclose(
            residual_covariance_diagonal(sys, post), np.diag(residual_covariance(sys, post)), rtol=1e-10, atol=1e-14
        )


class TestPushforward:
    def test_identity(self, random_system):
        post = fit_posterior(random_system)
        out = pushforward_affine(post, AffineMap(np.eye(6), np.zeros(6)))
        np.testing.assert_allclose(out.mean, post.mean)
        np.testing.assert_allclose(out.scale, post.scale, atol=1e-15)
        assert out.dof == post.dof

    def test_constant_functional(self, random_system):
        out = pushforward_affine(fit_posterior(random_system), AffineMap.row(np.zeros(6), 7.0))
        assert out.mean[0] == 7.0
        assert out.is_point_mass

    def test_constant_model_marginal(self, constant_system):
        post = fit_posterior(constant_system)
        t = marginal(pushforward_affine(post, AffineMap.row([1.0])), 0)
        assert t.location == pytest.approx(3.0)
        assert t.scale == pytest.approx(0.5)
        assert t.dof == pytest.approx(4.0)
        assert marginal(post, 0) == t

    def test_unit_row_equals_marginal(self, random_system):
        post = fit_posterior(random_system)
        e2 = np.zeros(6)
        e2[2] = 1.0
        pushed = marginal(pushforward_affine(post, AffineMap.row(e2)), 0)
        direct = marginal(post, 2)
        assert pushed.location == pytest.approx(direct.location, rel=1e-12)
        assert pushed.scale == pytest.approx(direct.scale, rel=1e-12)

    def test_dimension_mismatch(self, constant_system):
        with pytest.raises(InvalidSystemError):
            pushforward_affine(fit_posterior(constant_system), AffineMap.row([1.0, 1.0]))

    def test_marginal_index(self, constant_system):
        with pytest.raises(IndexError):
            marginal(fit_posterior(constant_system), 1)


class TestSampling:
    @pytest.fixture
    def post(self):
        return PosteriorT(mean=np.array([1.0, -2.0]), dof=10.0, sigma2_hat=1.0, scale=np.array([[1.0, 0.3], [0.3, 0.5]]))

    def test_moments(self, post):
        draws = sample_posterior(post, 100_000, 42, 2, 0)
        cov = post.covariance()
        se = np.sqrt(np.diag(cov) / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - post.mean) < 4.0 * se)
        emp = np.cov(draws.T)
        assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05

    def test_deterministic(self, post):
        np.testing.assert_array_equal(sample_posterior(post, 10, 1, 5), sample_posterior(post, 10, 1, 5))

    def test_gaussian_limit(self):
        post = PosteriorT(mean=np.array([0.5]), dof=1e6, sigma2_hat=1.0, scale=np.array([[4.0]]))
        draws = sample_posterior(post, 100_000, 3)
        assert stats.kstest(draws[:, 0], "norm", args=(0.5, 2.0)).statistic <= 0.01

    def test_point_mass(self):
        post = PosteriorT(mean=np.array([1.0, 2.0]), dof=5.0, sigma2_hat=0.0, scale=np.zeros((2, 2)))
        np.testing.assert_array_equal(sample_posterior(post, 4, 0), np.tile([1.0, 2.0], (4, 1)))

    def test_pushforward_commutes_with_sampling(self, post):
        amap = AffineMap.row([2.0, -1.0], 0.5)
        t = marginal(pushforward_affine(post, amap), 0)
        pushed = amap.apply(sample_posterior(post, 10_000, 9))[:, 0]
        assert stats.kstest(pushed, "t", args=(t.dof, t.location, t.scale)).statistic <= 0.02

    def test_invalid_draws(self, post):
        with pytest.raises(InvalidSystemError):
            sample_posterior(post, 0, 1)


class TestDerivedPosteriors:
    def test_gaussian_posterior(self, random_system):
        post = fit_posterior(random_system)
        mean, cov = gaussian_posterior(post)
        np.testing.assert_allclose(mean, post.mean)
        np.testing.assert_allclose(cov, post.covariance(), rtol=1e-10)

    def test_variance_posterior(self, random_system):
        post = fit_posterior(random_system)
        ig = variance_posterior(random_system, post)
        assert ig.alpha_post == pytest.approx(post.dof / 2.0)
        assert ig.mean_variance == pytest.approx(post.sigma2_hat, rel=1e-12)
        q_inv = np.linalg.inv(post.q_matrix())
        np.testing.assert_allclose(ig.beta_post / ig.alpha_post * q_inv, post.scale, rtol=1e-10)
        assert ig.alpha_prior == pytest.approx(ig.alpha_post - random_system.n / 2.0)

    def test_posterior_means_batch(self, random_system):
        post = fit_posterior(random_system)
        y = np.vstack([random_system.observations, 2.0 * random_system.observations])
        out = posterior_means(random_system, post, y)
        np.testing.assert_allclose(out[0], post.mean, atol=1e-12)
        np.testing.assert_allclose(out[1], 2.0 * post.mean, atol=1e-12)
