"""Spectral references, exact mode posteriors, and the error metrics."""

import numpy as np
import pytest
import scipy.linalg

from wispi.errors import TruncationError
from wispi.fem import Coefficients1D, HatBasis, Mesh1D, assemble_mass, fem_forward, fem_prior_covariance
from wispi.gaussian import GaussianMeasure, ObservationModel, posterior_weighted
from wispi.reference import (
    ModeBasis,
    SpectralReference,
    _UnionSpanOperator,
    error_metrics,
    mode_prior,
    spectral_posterior,
)
from wispi.space import WeightedSpace


def ones(x):
    return np.ones_like(x)


class TestSpectralReference:
    def test_interval_prior_eigenvalue(self):
        ref = SpectralReference("interval", 1.0, 0.0, 2, 16)
        np.testing.assert_allclose(ref.prior_cov_eigs[0], np.pi**-4, rtol=1e-14)

    def test_heat_factor(self):
        ref = SpectralReference("interval", 1.0, 0.0, 2, 8)
        np.testing.assert_allclose(ref.heat_factors[0], np.exp(-np.pi**2), rtol=1e-14)
        np.testing.assert_allclose(ref.heat_factors[2], np.exp(-9 * np.pi**2), rtol=1e-12)

    def test_interval_local_average_antiderivative(self):
        ref = SpectralReference("interval", 1.0, 0.0, 1, 6)
        c, delta = 0.4, 0.07
        obs = ref.observation_matrix([c], delta)
        for row, k in enumerate(ref.wavenumbers):
            expected = (np.sqrt(2) / (k * np.pi)) * (
                np.cos(k * np.pi * (c - delta)) - np.cos(k * np.pi * (c + delta))
            )
            np.testing.assert_allclose(obs[0, row], expected, rtol=1e-13)

    def test_interval_window_clipping(self):
        ref = SpectralReference("interval", 1.0, 0.0, 1, 4)
        obs = ref.observation_matrix([0.02], 0.05)  # clipped at x = 0
        nodes, weights = np.polynomial.legendre.leggauss(64)
        lo, hi = 0.0, 0.07
        x = (lo + hi) / 2 + (hi - lo) / 2 * nodes
        w = (hi - lo) / 2 * weights
        oracle = ref.evaluate_modes(x) @ w
        np.testing.assert_allclose(obs[0], oracle, atol=1e-14)

    def test_circle_modes_orthonormal(self):
        ref = SpectralReference("circle", 1.0, 1.0, 2, 9)
        x = np.linspace(0, 1, 20001)[:-1]
        modes = ref.evaluate_modes(x)
        gram = modes @ modes.T / x.size
        np.testing.assert_allclose(gram, np.eye(9), atol=1e-4)

    def test_circle_ball_matches_chordal_membership(self):
        # the analytic window must equal the arc whose chord length is delta
        ref = SpectralReference("circle", 1.0, 1.0, 1, 5)
        delta = 0.08
        obs = ref.observation_matrix([0.0], delta)
        half_arc = np.arcsin(np.pi * delta) / np.pi
        np.testing.assert_allclose(obs[0, 0], 2 * half_arc, rtol=1e-13)

    def test_mode_coefficient_parsing(self):
        ref = SpectralReference("interval", 1.0, 1.0, 2, 8)
        coeffs = ref.mode_coefficients("sin:1*2.0+sin:3*-0.5")
        expected = np.zeros(8)
        expected[0] = 2.0 / np.sqrt(2)
        expected[2] = -0.5 / np.sqrt(2)
        np.testing.assert_allclose(coeffs, expected)
        np.testing.assert_array_equal(ref.mode_coefficients("zero"), np.zeros(8))
        with pytest.raises(ValueError):
            ref.mode_coefficients("sin:99")

    def test_truncation_guard(self):
        ref = SpectralReference("interval", 1.0, 1.0, 1, 4)
        with pytest.raises(TruncationError):
            ref.check_truncation()


class TestSpectralPosterior:
    def test_posterior_matches_dense_formula(self):
        ref = SpectralReference("interval", 1.0, 1.0, 2, 32)
        centers, delta = [0.3, 0.7], 0.05
        gamma = 0.01 * np.eye(2)
        y = np.array([0.03, -0.02])
        post = spectral_posterior(ref, centers, delta, gamma, y, "sin:1")
        forward = ref.forward_matrix(centers, delta)
        prior_cov = np.diag(ref.prior_cov_eigs)
        m0 = ref.mode_coefficients("sin:1")
        innov = forward @ prior_cov @ forward.T + gamma
        gain = prior_cov @ forward.T @ np.linalg.inv(innov)
        mean = m0 + gain @ (y - forward @ m0)
        cov = prior_cov - gain @ forward @ prior_cov
        np.testing.assert_allclose(post.mean, mean, atol=1e-14)
        np.testing.assert_allclose(post.cov_dense(), cov, atol=1e-14)

    def test_prior_has_empty_lowrank(self):
        ref = SpectralReference("interval", 1.0, 1.0, 2, 16)
        prior = mode_prior(ref, "zero")
        assert prior.lowrank.shape == (16, 0)
        np.testing.assert_array_equal(prior.cov_dense(), np.diag(ref.prior_cov_eigs))


class TestErrorMetrics:
    def test_self_comparison_is_zero(self):
        """Discrete space = full reference mode space: both errors vanish."""
        ref = SpectralReference("interval", 1.0, 1.0, 2, 24)
        post = spectral_posterior(ref, [0.4], 0.05, np.eye(1) * 0.01, np.array([0.01]), "sin:1")
        space_modes = WeightedSpace(np.eye(24))
        discrete = GaussianMeasure(space_modes.vector(post.mean),
                                   space_modes.operator(post.cov_dense()), validate=False)
        met = error_metrics(discrete, ModeBasis(ref, 24), post)
        assert met["eps_m"] <= 1e-9
        assert met["eps_C"] <= 1e-9

    def test_cross_gram_closed_form_against_quadrature(self):
        mesh = Mesh1D(5)
        ref = SpectralReference("interval", 1.0, 1.0, 2, 12)
        gram = HatBasis(mesh).cross_gram(ref)
        nodes, weights = np.polynomial.legendre.leggauss(64)
        h = mesh.h
        basis = HatBasis(mesh)
        oracle = np.zeros_like(gram)
        for elem in range(6):
            lo, hi = elem * h, (elem + 1) * h
            x = (lo + hi) / 2 + (hi - lo) / 2 * nodes
            w = (hi - lo) / 2 * weights
            modes = ref.evaluate_modes(x)
            for i in range(5):
                unit = np.zeros(5)
                unit[i] = 1.0
                oracle[:, i] += modes @ (w * basis.evaluate(unit, x))
        np.testing.assert_allclose(gram, oracle, atol=1e-12)

    def test_cross_gram_formula_entry(self):
        mesh = Mesh1D(7)
        ref = SpectralReference("interval", 1.0, 1.0, 1, 10)
        gram = HatBasis(mesh).cross_gram(ref)
        k, i = 3, 2
        h = mesh.h
        expected = (np.sqrt(2) * 4 / (k**2 * np.pi**2 * h)) * np.sin(
            k * np.pi * mesh.nodes[i]) * np.sin(k * np.pi * h / 2) ** 2
        np.testing.assert_allclose(gram[k - 1, i], expected, rtol=1e-12)

    def test_operator_norm_matches_dense_oracle_prior(self):
        mesh = Mesh1D(7)
        ref = SpectralReference("interval", 1.0, 1.0, 2, 64)
        cov = fem_prior_covariance(mesh, Coefficients1D(ones, ones, 2))
        space = cov.space
        measure = GaussianMeasure(space.vector(np.zeros(7)), cov)
        ref_prior = mode_prior(ref, "zero")
        gram = HatBasis(mesh).cross_gram(ref)
        fast = error_metrics(measure, HatBasis(mesh), ref_prior)["eps_C"]
        # dense oracle: generalized symmetric eigenproblem on the union span
        union_gram = np.block([[np.eye(64), gram], [gram.T, space.mass]])
        c_ref = ref_prior.cov_dense()
        m_inv = np.linalg.inv(space.mass)
        block = np.block([
            [c_ref, c_ref @ gram],
            [-cov.matrix @ m_inv @ gram.T, -cov.matrix],
        ])
        product = union_gram @ block
        lams = scipy.linalg.eigh((product + product.T) / 2.0, union_gram, eigvals_only=True)
        np.testing.assert_allclose(fast, np.abs(lams).max(), rtol=1e-10)

    def test_operator_norm_matches_dense_oracle_posterior(self):
        mesh = Mesh1D(6)
        ref = SpectralReference("interval", 1.0, 1.0, 2, 48)
        cov = fem_prior_covariance(mesh, Coefficients1D(ones, ones, 2))
        space = cov.space
        prior = GaussianMeasure(space.vector(np.zeros(6)), cov)
        obs = ObservationModel(fem_forward(mesh, 1 / 32, [0.3, 0.7], 0.05),
                               0.01 * np.eye(2), np.array([0.02, -0.01]))
        post = posterior_weighted(prior, obs)
        ref_post = spectral_posterior(ref, [0.3, 0.7], 0.05, obs.gamma, obs.y, "zero")
        gram = HatBasis(mesh).cross_gram(ref)
        operator = _UnionSpanOperator(ref_post, post, gram)
        fast = operator.norm()
        dense = operator.dense_symmetrized()
        # same operator assembled densely and symmetrized in the R-coordinates
        oracle = np.abs(scipy.linalg.eigvalsh(dense)).max()
        np.testing.assert_allclose(fast, oracle, rtol=1e-9)

    def test_eps_m_expansion_against_function_quadrature(self):
        mesh = Mesh1D(5)
        ref = SpectralReference("interval", 1.0, 1.0, 2, 40)
        cov = fem_prior_covariance(mesh, Coefficients1D(ones, ones, 2))
        space = cov.space
        gram = HatBasis(mesh).cross_gram(ref)
        m0_modes = ref.mode_coefficients("sin:1*1.0+sin:2*0.3")
        discrete_mean = space.solve_mass(gram.T @ m0_modes)
        measure = GaussianMeasure(space.vector(discrete_mean), cov)
        ref_prior = mode_prior(ref, "sin:1*1.0+sin:2*0.3")
        eps_m = error_metrics(measure, HatBasis(mesh), ref_prior)["eps_m"]
        nodes, weights = np.polynomial.legendre.leggauss(64)
        basis = HatBasis(mesh)
        total = 0.0
        for elem in range(6):
            lo, hi = elem * mesh.h, (elem + 1) * mesh.h
            x = (lo + hi) / 2 + (hi - lo) / 2 * nodes
            w = (hi - lo) / 2 * weights
            ref_vals = m0_modes @ ref.evaluate_modes(x)
            disc_vals = basis.evaluate(discrete_mean, x)
            total += np.sum(w * (ref_vals - disc_vals) ** 2)
        np.testing.assert_allclose(eps_m, np.sqrt(total), rtol=1e-6)

    def test_mode_count_guard(self):
        ref = SpectralReference("interval", 1.0, 1.0, 2, 8)
        with pytest.raises(ValueError):
            ModeBasis(ref, 9)
