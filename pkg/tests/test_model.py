import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhsaem.errors import EmptyComponentError, ParameterError, ValidationError
from mhsaem.families import GaussianFamily, GaussianParams, SinhArcsinhFamily, get_family
from mhsaem.model import (MixtureParams, SufficientStats, dataset_loglik, family_grad_log_density,
                          family_log_density, gaussian_params_batch, gaussian_params_from,
                          gaussian_stats_of, log_joint, log_joint_matrix, log_marginal,
                          regularized_cov, responsibilities)

from conftest import random_flow_mixture, random_gaussian_mixture

mpmath.mp.dps = 50


def mp_gauss_logjoint(theta, x, k):
    """log(pi_k N(x; mu_k, Sigma_k)) evaluated in 50-digit arithmetic."""
    fam = theta.family
    mean, L = fam.unpack(theta.components[k])
    S = mpmath.matrix((L @ L.T).tolist())
    r = mpmath.matrix([mpmath.mpf(float(a)) - mpmath.mpf(float(b)) for a, b in zip(x, mean)])
    quad = (r.T * mpmath.inverse(S) * r)[0]
    D = len(x)
    dens = mpmath.exp(-quad / 2) / mpmath.sqrt((2 * mpmath.pi) ** D * mpmath.det(S))
    nu = [mpmath.mpf(float(v)) for v in theta.nu]
    w = mpmath.exp(nu[k]) / mpmath.fsum(mpmath.exp(v) for v in nu)
    return mpmath.log(w * dens)


class TestMixtureParams:
    def test_weights_on_simplex(self, rng):
        theta = random_gaussian_mixture(rng, 7, 2)
        w = theta.weights
        assert np.all((w > 0) & (w < 1))
        assert abs(w.sum() - 1.0) < 1e-12

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValidationError):
            MixtureParams(np.zeros(3), np.zeros((2, 5)), "gaussian", 2)

    def test_rejects_nonfinite(self):
        with pytest.raises(ParameterError):
            MixtureParams(np.array([0.0, np.nan]), np.zeros((2, 5)), "gaussian", 2)

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            MixtureParams(np.zeros(0), np.zeros((0, 5)), "gaussian", 2)

    def test_unknown_family(self):
        with pytest.raises(ValidationError):
            get_family("student_t", 2)

    def test_arrays_are_frozen(self, rng):
        theta = random_gaussian_mixture(rng, 3, 2)
        with pytest.raises(ValueError):
            theta.nu[0] = 1.0
        with pytest.raises(ValueError):
            theta.components[0, 0] = 1.0


class TestLogJoint:
    def test_standard_normal_at_zero(self):
        theta = MixtureParams(np.zeros(1), np.zeros((1, 2)), "gaussian", 1)
        assert log_joint(theta, [0.0], 1) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_identical_components_equal(self):
        comps = np.tile([0.3, -0.2, 0.1, 0.4, 0.0], (2, 1))
        theta = MixtureParams(np.zeros(2), comps, "gaussian", 2)
        x = [0.7, -1.1]
        assert log_joint(theta, x, 1) == log_joint(theta, x, 2)

    def test_against_extended_precision(self, rng):
        for _ in range(5):
            theta = random_gaussian_mixture(rng, 3, 2)
            x = rng.normal(size=2) * 2
            for k in range(3):
                ref = float(mp_gauss_logjoint(theta, x, k))
                assert log_joint(theta, x, k + 1) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_index_out_of_range(self, rng):
        theta = random_gaussian_mixture(rng, 3, 2)
        with pytest.raises(IndexError):
            log_joint(theta, [0.0, 0.0], 0)
        with pytest.raises(IndexError):
            log_joint(theta, [0.0, 0.0], 4)

    def test_nonfinite_x(self, rng):
        theta = random_gaussian_mixture(rng, 3, 2)
        with pytest.raises(ValidationError):
            log_joint(theta, [np.inf, 0.0], 1)

    def test_matrix_agrees_with_pointwise(self, rng):
        theta = random_gaussian_mixture(rng, 4, 3)
        X = rng.normal(size=(6, 3))
        lj = log_joint_matrix(theta, X)
        for n in range(6):
            for k in range(4):
                assert lj[n, k] == pytest.approx(log_joint(theta, X[n], k + 1), abs=1e-12)


class TestLogMarginal:
    def test_single_component(self, rng):
        theta = random_gaussian_mixture(rng, 1, 2)
        x = rng.normal(size=2)
        assert log_marginal(theta, x) == pytest.approx(log_joint(theta, x, 1), abs=1e-14)

    def test_two_equal_terms(self):
        comps = np.zeros((2, 2))
        theta = MixtureParams(np.zeros(2), comps, "gaussian", 1)
        v = log_joint(theta, [0.5], 1)
        assert log_marginal(theta, [0.5]) == pytest.approx(v + math.log(2), abs=1e-14)

    def test_against_extended_precision_sum(self, rng):
        for _ in range(5):
            theta = random_gaussian_mixture(rng, 4, 2)
            x = rng.normal(size=2) * 3
            ref = mpmath.log(mpmath.fsum(mpmath.exp(mp_gauss_logjoint(theta, x, k)) for k in range(4)))
            assert log_marginal(theta, x) == pytest.approx(float(ref), rel=1e-12)

    def test_no_overflow_for_large_log_joints(self):
        # a point 35 sd away gives log-joints near -600
        comps = np.array([[0.0, 0.0], [1.0, 0.0]])
        theta = MixtureParams(np.zeros(2), comps, "gaussian", 1)
        v = log_marginal(theta, [35.0])
        assert np.isfinite(v) and v < -500


class TestResponsibilities:
    def test_symmetric(self):
        theta = MixtureParams(np.zeros(2), np.zeros((2, 2)), "gaussian", 1)
        np.testing.assert_allclose(responsibilities(theta, [0.3]), [0.5, 0.5], atol=1e-15)

    def test_single(self, rng):
        theta = random_gaussian_mixture(rng, 1, 2)
        assert responsibilities(theta, [1.0, 2.0]).tolist() == [1.0]

    def test_enumeration_oracle(self, rng):
        theta = random_gaussian_mixture(rng, 3, 2)
        x = rng.normal(size=2)
        terms = [mp_gauss_logjoint(theta, x, k) for k in range(3)]
        Z = mpmath.fsum(mpmath.exp(t) for t in terms)
        ref = [float(mpmath.exp(t) / Z) for t in terms]
        np.testing.assert_allclose(responsibilities(theta, x), ref, rtol=1e-12, atol=1e-15)


class TestDatasetLoglik:
    def test_single_row(self, rng):
        theta = random_gaussian_mixture(rng, 3, 2)
        x = rng.normal(size=2)
        assert dataset_loglik(theta, x[None]) == pytest.approx(log_marginal(theta, x), abs=1e-14)

    def test_duplicated_rows(self, rng):
        theta = random_gaussian_mixture(rng, 3, 2)
        x = rng.normal(size=2)
        assert dataset_loglik(theta, np.stack([x, x])) == pytest.approx(2 * log_marginal(theta, x), rel=1e-14)

    def test_empty(self, rng):
        theta = random_gaussian_mixture(rng, 3, 2)
        with pytest.raises(ValidationError):
            dataset_loglik(theta, np.empty((0, 2)))


def _central_diff(f, eta, h=1e-5):
    g = np.empty_like(eta)
    for p in range(eta.size):
        e = np.zeros_like(eta)
        e[p] = h
        g[p] = (f(eta + e) - f(eta - e)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric):
    # relative 1e-5, with an absolute 1e-8 allowance for entries near zero
    err = np.abs(analytic - numeric)
    assert np.all(err < np.maximum(1e-5 * np.abs(numeric), 1e-8)), err.max()


class TestFamilies:
    def test_gaussian_identity_2d(self):
        fam = GaussianFamily(2)
        eta = np.zeros(fam.n_params)
        assert family_log_density(fam, eta, [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-15)

    def test_flow_identity_1d(self):
        fam = SinhArcsinhFamily(1)
        assert family_log_density(fam, np.zeros(4), [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_flow_identity_is_standard_normal(self, rng):
        fam = SinhArcsinhFamily(3)
        X = rng.normal(size=(20, 3)) * 3
        ref = -0.5 * np.sum(X * X, axis=1) - 1.5 * math.log(2 * math.pi)
        np.testing.assert_allclose(fam.logpdf(np.zeros(12), X), ref, rtol=1e-12, atol=1e-12)

    def test_flow_density_normalizes_1d(self, rng):
        from scipy.integrate import quad
        fam = SinhArcsinhFamily(1)
        eta = np.array([0.4, -0.3, 0.5, 0.2])
        val, _ = quad(lambda x: math.exp(fam.logpdf(eta, np.array([[x]]))[0]), -np.inf, np.inf)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_gaussian_pack_roundtrip(self, rng):
        fam = GaussianFamily(3)
        A = rng.normal(size=(3, 3))
        L = np.linalg.cholesky(A @ A.T + np.eye(3))
        p = GaussianParams(rng.normal(size=3), L)
        q = fam.to_params(fam.pack(p))
        np.testing.assert_allclose(q.mean, p.mean, rtol=0, atol=0)
        np.testing.assert_allclose(q.chol_cov, p.chol_cov, rtol=1e-15)

    def test_sigma_only_matters(self, rng):
        # a factor with a flipped column sign gives the same Sigma; the
        # density computed through Sigma directly must agree
        from scipy.stats import multivariate_normal
        fam = GaussianFamily(2)
        A = rng.normal(size=(2, 2))
        L = np.linalg.cholesky(A @ A.T + np.eye(2))
        mean = rng.normal(size=2)
        X = rng.normal(size=(10, 2))
        ref = multivariate_normal(mean, L @ L.T).logpdf(X)
        np.testing.assert_allclose(fam.logpdf(fam.pack(GaussianParams(mean, L)), X), ref, rtol=1e-12)
        Lf = L * np.array([1.0, -1.0])
        np.testing.assert_allclose(Lf @ Lf.T, L @ L.T, atol=1e-14)
        assert np.allclose(multivariate_normal(mean, Lf @ Lf.T).logpdf(X), ref, rtol=1e-12)

    def test_nonpositive_cholesky_rejected(self):
        with pytest.raises(ParameterError):
            GaussianParams(np.zeros(2), np.array([[1.0, 0.0], [0.3, -1.0]]))

    def test_validate_rejects_nonfinite(self):
        with pytest.raises(ParameterError):
            family_log_density(GaussianFamily(1), np.array([0.0, np.inf]), [0.0])

    @pytest.mark.parametrize("D", [1, 2, 4])
    def test_gaussian_gradient_fd(self, rng, D):
        fam = GaussianFamily(D)
        for _ in range(5):
            eta = rng.normal(size=fam.n_params) * 0.5
            x = rng.normal(size=D)
            g = family_grad_log_density(fam, eta, x)
            num = _central_diff(lambda e: family_log_density(fam, e, x), eta)
            assert_grad_close(g, num)

    @pytest.mark.parametrize("D", [1, 3])
    def test_flow_gradient_fd(self, rng, D):
        fam = SinhArcsinhFamily(D)
        for _ in range(5):
            eta = rng.normal(size=fam.n_params) * 0.5
            x = rng.normal(size=D) * 2
            g = family_grad_log_density(fam, eta, x)
            num = _central_diff(lambda e: family_log_density(fam, e, x), eta)
            assert_grad_close(g, num)

    def test_row_batched_matches_single(self, rng):
        for fam, theta in ((GaussianFamily(3), random_gaussian_mixture(rng, 4, 3)),
                           (SinhArcsinhFamily(3), random_flow_mixture(rng, 4, 3))):
            X = rng.normal(size=(9, 3))
            ks = rng.integers(0, 4, 9)
            rows_lp = fam.logpdf_rows(theta.components[ks], X)
            rows_g = fam.grad_logpdf_rows(theta.components[ks], X)
            for n in range(9):
                eta = theta.components[ks[n]]
                assert rows_lp[n] == pytest.approx(fam.logpdf(eta, X[n:n + 1])[0], rel=1e-12)
                np.testing.assert_allclose(rows_g[n], fam.grad_logpdf(eta, X[n:n + 1])[0],
                                           rtol=1e-10, atol=1e-12)


class TestSufficientStats:
    def test_single_point(self):
        x = np.array([1.5, -2.0])
        params, s0 = gaussian_params_from(gaussian_stats_of(x))
        np.testing.assert_allclose(params.mean, x)
        assert s0 == 1.0
        np.testing.assert_allclose(params.cov, 1e-9 * np.eye(2), atol=1e-20)

    def test_two_points_1d(self):
        params, _ = gaussian_params_from(gaussian_stats_of(np.array([[-1.0], [1.0]])))
        assert params.mean[0] == 0.0
        assert params.cov[0, 0] == pytest.approx(1.0 + 1e-6, rel=1e-14)

    def test_matches_direct_moments(self, rng):
        X = rng.normal(size=(10, 3)) @ rng.normal(size=(3, 3))
        params, s0 = gaussian_params_from(gaussian_stats_of(X))
        mean = X.mean(axis=0)
        cov = (X - mean).T @ (X - mean) / 10
        np.testing.assert_allclose(params.mean, mean, rtol=1e-12)
        np.testing.assert_allclose(params.cov, regularized_cov(cov), rtol=1e-10, atol=1e-12)
        assert s0 == 10

    def test_empty(self):
        with pytest.raises(EmptyComponentError):
            gaussian_params_from(SufficientStats(0.0, np.zeros(2), np.zeros((2, 2))))

    def test_negative_count(self):
        with pytest.raises(ValidationError):
            SufficientStats(-1.0, np.zeros(2), np.zeros((2, 2)))

    def test_regularization_floor(self):
        S = regularized_cov(np.zeros((3, 3)))
        np.testing.assert_array_equal(S, 1e-9 * np.eye(3))

    def test_batch_matches_single(self, rng):
        stats = [gaussian_stats_of(rng.normal(size=(6, 2)), rng.uniform(size=6)) for _ in range(4)]
        stats.append(SufficientStats(0.0, np.zeros(2), np.zeros((2, 2))))
        means, L, ok = gaussian_params_batch(np.array([s.s0 for s in stats]),
                                             np.stack([s.s1 for s in stats]),
                                             np.stack([s.s2 for s in stats]))
        assert ok.tolist() == [True] * 4 + [False]
        for k in range(4):
            p, _ = gaussian_params_from(stats[k])
            np.testing.assert_allclose(means[k], p.mean, rtol=1e-13)
            np.testing.assert_allclose(L[k], p.chol_cov, rtol=1e-12, atol=1e-14)


finite = st.floats(-5, 5, allow_nan=False)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), shift=st.floats(-50, 50), beta=st.floats(0.05, 3))
    def test_normalization_and_shift_invariance(self, seed, shift, beta):
        r = np.random.default_rng(seed)
        theta = random_gaussian_mixture(r, 5, 2)
        x = r.normal(size=2) * 3
        resp = responsibilities(theta, x, beta)
        assert abs(resp.sum() - 1.0) < 1e-12
        shifted = theta.replace(nu=theta.nu + shift)
        np.testing.assert_allclose(shifted.weights, theta.weights, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(responsibilities(shifted, x, beta), resp, rtol=1e-10, atol=1e-14)
        assert log_marginal(shifted, x) == pytest.approx(log_marginal(theta, x), rel=1e-12, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_logsumexp_dominance(self, seed):
        r = np.random.default_rng(seed)
        theta = random_gaussian_mixture(r, 4, 3)
        x = r.normal(size=3) * 4
        lm = log_marginal(theta, x)
        for k in range(1, 5):
            assert lm >= log_joint(theta, x, k)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_flow_gradient_property(self, seed):
        r = np.random.default_rng(seed)
        fam = SinhArcsinhFamily(2)
        eta = r.normal(size=8) * 0.4
        x = r.normal(size=2) * 2
        num = _central_diff(lambda e: family_log_density(fam, e, x), eta)
        assert_grad_close(family_grad_log_density(fam, eta, x), num)
