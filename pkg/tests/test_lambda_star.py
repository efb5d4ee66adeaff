"""Hermite polynomials/coefficients, Khatri-Rao powers, and the two Gram
estimators, cross-checked against each other and closed-form cases."""

import math

import numpy as np
import pytest
from scipy import special

from pyrcert.activation import ActivationParams, as_function
from pyrcert.initializers import sphere_data
from pyrcert.lambda_star import (
    GramEstimate,
    gram_hermite,
    gram_mc,
    hermite_coeff,
    hermite_coeffs,
    hermite_poly,
    khatri_rao_power,
    kr_min_singular,
    lambda_star,
    sigma_linear,
)

ACT = ActivationParams(0.5, 1.0)
SIGMA = as_function(ACT)


class TestHermitePoly:
    def test_first_two_orders(self):
        xs = np.linspace(-3, 3, 11)
        np.testing.assert_array_equal(hermite_poly(0, xs), np.ones(11))
        np.testing.assert_array_equal(hermite_poly(1, xs), xs)

    def test_order_two_at_zero(self):
        assert hermite_poly(2, 0.0) == pytest.approx(-1.0 / math.sqrt(2), rel=1e-15)

    def test_orthonormal_under_gaussian_weight(self):
        nodes, weights = special.roots_hermite(200)
        y = math.sqrt(2.0) * nodes
        for j in range(11):
            hj = hermite_poly(j, y)
            for k in range(j, 11):
                hk = hermite_poly(k, y)
                inner = float(np.sum(weights * hj * hk)) / math.sqrt(math.pi)
                assert inner == pytest.approx(1.0 if j == k else 0.0, abs=1e-8)

    def test_order_cap(self):
        with pytest.raises(ValueError):
            hermite_poly(201, 0.0)
        with pytest.raises(ValueError):
            hermite_poly(-1, 0.0)


class TestHermiteCoeff:
    def test_linear_target(self):
        spec = hermite_coeffs(sigma_linear, 6)
        assert spec.coeffs[1] == pytest.approx(1.0, abs=1e-10)
        others = np.delete(spec.coeffs, 1)
        assert np.max(np.abs(others)) <= 1e-10

    def test_square_target(self):
        spec = hermite_coeffs(lambda x: np.asarray(x) ** 2, 6)
        assert spec.coeffs[0] == pytest.approx(1.0, abs=1e-10)
        assert spec.coeffs[2] == pytest.approx(math.sqrt(2.0), abs=1e-10)
        others = np.delete(spec.coeffs, [0, 2])
        assert np.max(np.abs(others)) <= 1e-10

    def test_smoothed_activation_coeffs_stable_under_refinement(self):
        # the narrow Gaussian bump needs ~200 nodes; from there doubling the
        # order moves every coefficient by less than 1e-9
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            a = hermite_coeffs(SIGMA, 10, quad_order=200)
            b = hermite_coeffs(SIGMA, 10, quad_order=400)
        assert np.all(a.converged) and np.all(b.converged)
        assert np.max(np.abs(a.coeffs - b.coeffs)) <= 1e-9

    def test_single_coefficient_helper(self):
        assert hermite_coeff(SIGMA, 1) == pytest.approx((1 + ACT.gamma) / 2, abs=1e-10)

    def test_nonconvergent_target_flagged(self):
        # a cusp keeps high-order quadrature from stabilizing to 1e-8
        rough = lambda x: np.sqrt(np.abs(np.asarray(x)))
        with pytest.warns(UserWarning, match="did not stabilize"):
            spec = hermite_coeffs(rough, 40)
        assert not np.all(spec.converged)

    def test_nonpolynomiality_witness(self):
        # some coefficient of order >= 3 stays bounded away from zero
        spec = hermite_coeffs(SIGMA, 10)
        assert np.max(np.abs(spec.coeffs[3:])) > 1e-6

    def test_odd_orders_above_one_vanish(self):
        # the activation is linear-plus-even, so mu_3, mu_5, ... are zero
        spec = hermite_coeffs(SIGMA, 9)
        assert abs(spec.coeffs[3]) <= 1e-10
        assert abs(spec.coeffs[5]) <= 1e-10


class TestKhatriRaoPower:
    def test_basis_row(self):
        d = 4
        X = np.zeros((1, d))
        X[0, 0] = 1.0
        K = khatri_rao_power(X, 2)
        assert K.shape == (1, 16)
        want = np.zeros(16)
        want[0] = 1.0
        np.testing.assert_array_equal(K[0], want)

    def test_orthogonal_rows_exact_min_singular(self):
        X = math.sqrt(2.0) * np.eye(2)
        exact, bound = kr_min_singular(X, 2)
        assert exact == pytest.approx(2.0, rel=1e-12)
        assert bound == pytest.approx(2.0, rel=1e-12)

    def test_gram_identity(self):
        X = sphere_data(20, 10, seed=1)
        K = khatri_rao_power(X, 2)
        gram = K @ K.T
        want = (X @ X.T) ** 2
        assert np.max(np.abs(gram - want)) <= 1e-10 * np.max(np.abs(want))

    def test_memory_budget_rejected(self):
        X = np.ones((10, 100))
        with pytest.raises(ValueError, match="budget"):
            khatri_rao_power(X, 4)  # 10 * 100^4 = 1e9 entries

    def test_power_one_is_identity_map(self):
        X = sphere_data(3, 4, seed=2)
        np.testing.assert_array_equal(khatri_rao_power(X, 1), X)


class TestKrMinSingular:
    def test_duplicate_rows_vacuous_bound(self):
        base = sphere_data(3, 4, seed=3)
        X = np.vstack([base, base[:1]])
        exact, bound = kr_min_singular(X, 2)
        assert exact <= 1e-10
        assert bound <= 0.0

    def test_bound_never_exceeds_exact(self):
        for seed in range(20):
            X = sphere_data(6, 12, seed=seed)
            exact, bound = kr_min_singular(X, 2)
            assert bound <= exact + 1e-9

    def test_sphere_data_beats_half_threshold(self):
        # d^{r/2}/2 floor in the oversquare regime N <= d^r
        hits = 0
        for seed in range(50):
            X = sphere_data(30, 40, seed=seed)
            exact, _ = kr_min_singular(X, 2)
            hits += exact >= 40.0 / 2.0
        assert hits >= 49


class TestGramMc:
    def test_linear_sigma_recovers_scaled_data_gram(self):
        X = sphere_data(8, 5, seed=4)
        est = gram_mc(X, sigma_linear, 100_000, seed=11)
        want = X @ X.T / 5.0
        assert np.all(np.abs(est.gram - want) <= 5.0 * est.stderr + 1e-12)

    def test_linear_sigma_rank_deficient_when_overdetermined(self):
        X = sphere_data(8, 4, seed=5)  # N > d
        est = gram_mc(X, sigma_linear, 20_000, seed=12)
        assert abs(est.lambda_min) <= 1e-10

    def test_diagonal_bounded_by_one_on_sphere_data(self):
        X = sphere_data(10, 6, seed=6)
        est = gram_mc(X, SIGMA, 50_000, seed=13)
        assert np.all(np.diag(est.gram) <= 1.0 + 5.0 * np.diag(est.stderr))

    def test_deterministic_given_seed(self):
        X = sphere_data(5, 4, seed=7)
        a = gram_mc(X, SIGMA, 10_000, seed=21)
        b = gram_mc(X, SIGMA, 10_000, seed=21)
        np.testing.assert_array_equal(a.gram, b.gram)

    def test_symmetric_and_psd_up_to_noise(self):
        X = sphere_data(6, 4, seed=8)
        est = gram_mc(X, SIGMA, 5_000, seed=23)
        np.testing.assert_allclose(est.gram, est.gram.T, atol=1e-14)
        assert est.lambda_min >= -1e-10


class TestGramHermite:
    def test_linear_sigma_single_term(self):
        X = sphere_data(6, 4, seed=9)
        spec = hermite_coeffs(sigma_linear, 5)
        est = gram_hermite(X, spec, r_max=5)
        np.testing.assert_allclose(est.gram, X @ X.T / 4.0, atol=1e-9)

    def test_lambda_min_nondecreasing_in_truncation(self):
        X = sphere_data(8, 6, seed=10)
        spec = hermite_coeffs(SIGMA, 10)
        prev = -np.inf
        for r in range(11):
            est = gram_hermite(X, spec, r_max=r)
            assert est.lambda_min >= prev - 1e-12
            prev = est.lambda_min

    def test_matches_scalar_series(self):
        X = sphere_data(7, 5, seed=11)
        spec = hermite_coeffs(SIGMA, 8)
        est = gram_hermite(X, spec, r_max=8)
        C = X @ X.T / 5.0
        want = sum(spec.coeffs[k] ** 2 * C**k for k in range(9))
        assert np.max(np.abs(est.gram - want)) <= 1e-10

    def test_cross_checks_against_monte_carlo(self):
        X = sphere_data(8, 6, seed=12)
        spec = hermite_coeffs(SIGMA, 10)
        herm = gram_hermite(X, spec, r_max=10)
        mc = gram_mc(X, SIGMA, 200_000, seed=31)
        allowance = 5.0 * mc.stderr + herm.tail_mass
        assert np.all(np.abs(mc.gram - herm.gram) <= allowance)

    def test_rejects_off_sphere_rows(self):
        X = 2.0 * np.ones((3, 4))  # row norm 4, not sqrt(4)
        spec = hermite_coeffs(SIGMA, 4)
        with pytest.raises(ValueError, match="sqrt"):
            gram_hermite(X, spec, 4)

    def test_tail_mass_reported(self):
        X = sphere_data(5, 4, seed=13)
        spec = hermite_coeffs(SIGMA, 10)
        est = gram_hermite(X, spec, r_max=4)
        assert est.tail_mass == pytest.approx(spec.tail_mass(4))
        assert est.tail_mass > gram_hermite(X, spec, r_max=10).tail_mass


class TestLambdaStar:
    def test_identity_matrix(self):
        assert lambda_star(np.eye(4)) == pytest.approx(1.0, abs=1e-12)

    def test_duplicate_rows_drive_it_to_zero(self):
        base = sphere_data(4, 6, seed=14)
        X = np.vstack([base, base[:1]])
        spec = hermite_coeffs(SIGMA, 8)
        est = gram_hermite(X, spec, 8)
        assert est.lambda_min <= 1e-10

    def test_accepts_estimate_or_matrix(self):
        X = sphere_data(5, 4, seed=15)
        spec = hermite_coeffs(SIGMA, 6)
        est = gram_hermite(X, spec, 6)
        assert lambda_star(est) == est.lambda_min

    def test_rejects_asymmetry(self):
        M = np.eye(3)
        M[0, 1] = 1e-3
        with pytest.raises(ValueError, match="asymmetric"):
            lambda_star(M)

    def test_upper_bound_one_on_sphere_data(self):
        # trace bound: lambda* <= ||X||_F^2 / (N d) = 1
        for seed in range(5):
            X = sphere_data(6, 8, seed=seed)
            est = gram_mc(X, SIGMA, 20_000, seed=seed)
            assert est.lambda_min <= 1.0 + 5.0 * est.stderr_max


class TestHermiteCorrelationIdentity:
    def test_mc_matches_inner_product_powers(self):
        # E[h_j(<w,x>) h_k(<w,y>)] = <x,y>^j when j == k, else 0
        rng = np.random.default_rng(99)
        d = 5
        x = rng.normal(size=d)
        x /= np.linalg.norm(x)
        y = rng.normal(size=d)
        y /= np.linalg.norm(y)
        inner = float(x @ y)
        n = 400_000
        W = rng.normal(size=(n, d))
        wx, wy = W @ x, W @ y
        for j in range(5):
            hj = hermite_poly(j, wx)
            for k in range(j, 5):
                prod = hj * hermite_poly(k, wy)
                mean = float(prod.mean())
                stderr = float(prod.std(ddof=1) / math.sqrt(n))
                want = inner**j if j == k else 0.0
                assert abs(mean - want) <= 5.0 * stderr + 1e-12
