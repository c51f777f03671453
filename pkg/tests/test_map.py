"""OM functional, optimizer, Burgers forward model, and refinement studies."""

import numpy as np
import pytest

from wispi import _burgers_np, kernels
from wispi.burgers import (
    SpectralGalerkinBurgers,
    burgers_forward,
    complex_to_real,
    parse_mode_string,
    real_to_complex,
)
from wispi.errors import DivergenceError, MaxIterationsError
from wispi.fem import Coefficients1D, Mesh1D, assemble_mass, fem_forward, fem_prior_covariance
from wispi.gaussian import GaussianMeasure, ObservationModel, posterior_weighted
from wispi.harness import build_burgers_problem, build_linear_spectral_problem
from wispi.map_estimation import OMFunctional, map_refinement_study, om_eval, om_minimize
from wispi.reference import SpectralReference
from wispi.space import WeightedSpace


def ones(x):
    return np.ones_like(x)


def scalar_functional(y=2.0):
    space = WeightedSpace(np.eye(1))
    prior = GaussianMeasure(space.vector([0.0]), space.operator([[1.0]]))
    return OMFunctional(np.array([[1.0]]), np.array([y]), np.array([[1.0]]), prior)


def fem_functional(n=15, alpha=2, seed=21):
    mesh = Mesh1D(n)
    space = assemble_mass(mesh)
    cov = fem_prior_covariance(mesh, Coefficients1D(ones, ones, alpha))
    rng = np.random.default_rng(seed)
    m0 = 0.2 * rng.standard_normal(n)
    prior = GaussianMeasure(space.vector(m0), cov)
    forward = fem_forward(mesh, 1 / 64, [0.2, 0.5, 0.8], 0.05)
    y = forward @ m0 + 0.1 * rng.standard_normal(3)
    gamma = 0.01 * np.eye(3)
    return OMFunctional(forward, y, gamma, prior), space, prior, ObservationModel(forward, gamma, y)


class TestOmEval:
    def test_zero_at_prior_mean_with_exact_data(self):
        space = WeightedSpace(np.eye(2))
        prior = GaussianMeasure(space.vector([1.0, -1.0]), space.operator(np.eye(2)))
        forward = np.array([[1.0, 2.0]])
        fn = OMFunctional(forward, forward @ prior.mean.coeffs, np.eye(1), prior)
        assert om_eval(fn, prior.mean.coeffs) == 0.0

    def test_scalar_arithmetic(self):
        fn = scalar_functional(y=2.0)
        np.testing.assert_allclose(om_eval(fn, np.array([1.0])), 1.0, rtol=1e-14)

    def test_nonnegative_everywhere(self):
        fn, _, _, _ = fem_functional()
        rng = np.random.default_rng(48)
        for _ in range(20):
            assert om_eval(fn, rng.standard_normal(15)) >= 0.0

    def test_value_at_prior_mean_is_pure_misfit(self):
        fn, _, prior, obs = fem_functional()
        misfit = 0.5 * float(
            (obs.y - obs.forward @ prior.mean.coeffs)
            @ np.linalg.solve(obs.gamma, obs.y - obs.forward @ prior.mean.coeffs)
        )
        np.testing.assert_allclose(om_eval(fn, prior.mean.coeffs), misfit, rtol=1e-12)

    def test_complete_the_square_identity(self):
        """For linear F the functional is the posterior quadratic form plus a constant."""
        fn, space, prior, obs = fem_functional()
        post = posterior_weighted(prior, obs)
        precision = np.linalg.inv(space.solve_mass(post.cov.matrix.T).T)  # Euclidean form
        rng = np.random.default_rng(49)
        base = om_eval(fn, post.mean.coeffs)
        for _ in range(10):
            u = post.mean.coeffs + 0.1 * rng.standard_normal(15)
            delta = u - post.mean.coeffs
            expected = base + 0.5 * float(delta @ precision @ delta)
            np.testing.assert_allclose(om_eval(fn, u), expected, rtol=1e-9)


class TestGradient:
    def test_linear_gradient_matches_central_differences(self):
        fn, space, _, _ = fem_functional()
        rng = np.random.default_rng(50)
        for _ in range(20):
            u = rng.standard_normal(15) * 0.3
            grad = fn.gradient(u)
            direction = rng.standard_normal(15)
            eps = 1e-6
            numeric = (om_eval(fn, u + eps * direction) - om_eval(fn, u - eps * direction)) / (
                2 * eps)
            analytic = float(grad @ (space.mass @ direction))
            assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(numeric))

    def test_nonlinear_gradient_matches_central_differences(self):
        model = SpectralGalerkinBurgers(6, 0.05, 0.01, np.array([0.2, 0.6, 0.9]))
        space = WeightedSpace(np.eye(12))
        lam = (2 * np.pi * np.arange(1, 7)) ** 2
        cov = np.diag(np.concatenate([lam, lam]) ** -2.0)
        prior = GaussianMeasure(space.vector(np.zeros(12)), space.operator(cov), validate=False)
        y = np.array([0.01, -0.02, 0.005])
        fn = OMFunctional(lambda u: burgers_forward(model, u), y, 1e-3 * np.eye(3), prior)
        rng = np.random.default_rng(51)
        for _ in range(5):
            u = 0.01 * rng.standard_normal(12)
            grad = fn.gradient(u)
            direction = rng.standard_normal(12)
            eps = 1e-5
            numeric = (om_eval(fn, u + eps * direction) - om_eval(fn, u - eps * direction)) / (
                2 * eps)
            analytic = float(grad @ direction)
            assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(numeric))


class TestOmMinimize:
    def test_linear_fem_matches_posterior_mean(self):
        mesh = Mesh1D(15)  # h = 1/16
        space = assemble_mass(mesh)
        cov = fem_prior_covariance(mesh, Coefficients1D(ones, ones, 2))
        ref = SpectralReference("interval", 1.0, 1.0, 2, 128)
        rng = np.random.default_rng(52)
        m0 = space.solve_mass(
            __import__("wispi.fem", fromlist=["HatBasis"]).HatBasis(mesh).cross_gram(ref).T
            @ ref.mode_coefficients("sin:1"))
        prior = GaussianMeasure(space.vector(m0), cov)
        forward = fem_forward(mesh, 1 / 64, [0.2, 0.4, 0.6, 0.8], 0.05)
        y = forward @ m0 + 0.1 * rng.standard_normal(4)
        obs = ObservationModel(forward, 0.01 * np.eye(4), y)
        exact = posterior_weighted(prior, obs)
        fn = OMFunctional(forward, y, obs.gamma, prior)
        minimizer = om_minimize(fn, m0, tol=1e-8)
        assert space.norm(minimizer - exact.mean.coeffs) <= 1e-6

    def test_no_observations_returns_prior_mean(self):
        fn, space, prior, _ = fem_functional()
        zero_fn = OMFunctional(np.zeros((2, 15)), np.zeros(2), np.eye(2), prior)
        minimizer = om_minimize(zero_fn, np.zeros(15), tol=1e-12)
        assert space.norm(minimizer - prior.mean.coeffs) <= 1e-10

    def test_max_iterations_carries_best(self):
        fn, _, prior, _ = fem_functional()
        with pytest.raises(MaxIterationsError) as info:
            om_minimize(fn, prior.mean.coeffs + 1.0, tol=0.0, max_iter=2)
        assert info.value.best is not None
        assert np.isfinite(info.value.best_value)

    def test_burgers_descent_from_prior_mean(self):
        problem, y, _ = build_burgers_problem({
            "nu": 0.05, "alpha": 2, "t_obs": 0.002,
            "obs_points": [0.15, 0.45, 0.8], "gamma_scale": 1e-4,
            "seed": 6, "data_modes": 32, "forcing": "zero",
        })
        fn = problem.build(8)
        m0 = fn.prior.mean.coeffs
        try:
            minimizer = om_minimize(fn, m0, tol=1e-8, max_iter=300)
        except MaxIterationsError as exc:
            minimizer = exc.best
        assert om_eval(fn, minimizer) < om_eval(fn, m0)


class TestBurgersModel:
    def test_zero_state_zero_observations(self):
        model = SpectralGalerkinBurgers(8, 0.05, 0.5, np.array([0.1, 0.6]))
        np.testing.assert_array_equal(burgers_forward(model, np.zeros(16)), np.zeros(2))

    def test_single_mode_linear_decay(self):
        model = SpectralGalerkinBurgers(8, 0.05, 1.0, np.array([0.0, 0.25]))
        u = np.zeros(16)
        u[0] = 1e-3  # cosine mode k = 1, amplitude 1e-3 * sqrt(2) in the field
        observed = burgers_forward(model, u)
        decay = np.exp(-0.05 * (2 * np.pi) ** 2)
        expected = 1e-3 * decay * np.sqrt(2.0) * np.cos(2 * np.pi * np.array([0.0, 0.25]))
        np.testing.assert_allclose(observed, expected, rtol=1e-3, atol=1e-9)

    def test_energy_non_increasing_without_forcing(self):
        model = SpectralGalerkinBurgers(12, 0.05, 0.3, np.array([0.5]))
        rng = np.random.default_rng(53)
        u = 0.05 * rng.standard_normal(24)
        final = model.evolve(u)
        assert np.linalg.norm(complex_to_real(final)) <= np.linalg.norm(u) * (1 + 1e-12)

    def test_truncated_quadratic_term_conserves_energy(self):
        rng = np.random.default_rng(54)
        v = rng.standard_normal(10) + 1j * rng.standard_normal(10)
        conv = kernels.convolve_quadratic(v)
        k = np.arange(1, 11)
        nonlinear = -1j * np.pi * k * conv
        # <B(v,v), v> over the real field = 2 Re sum conj(v_k) * N_k
        pairing = 2.0 * np.real(np.vdot(v, nonlinear))
        assert abs(pairing) <= 1e-12 * np.linalg.norm(v) ** 3

    def test_divergence_guard(self):
        model = SpectralGalerkinBurgers(8, 1e-6, 5.0, np.array([0.5]))
        u = np.zeros(16)
        u[0] = 2e6  # first mode above the guard threshold from the start
        with pytest.raises(DivergenceError):
            burgers_forward(model, u)

    def test_point_values_fourier_sum(self):
        model = SpectralGalerkinBurgers(4, 0.05, 0.1, np.array([0.3]))
        rng = np.random.default_rng(55)
        u = rng.standard_normal(8)
        modes = real_to_complex(u)
        x = np.array([0.1, 0.77])
        direct = np.zeros(2)
        for k in range(1, 5):
            direct += u[k - 1] * np.sqrt(2) * np.cos(2 * np.pi * k * x)
            direct += u[4 + k - 1] * np.sqrt(2) * np.sin(2 * np.pi * k * x)
        np.testing.assert_allclose(model.point_values(modes, x), direct, atol=1e-12)

    def test_parse_mode_string(self):
        out = parse_mode_string("cos:1*2.0+sin:3*-1.0", 4)
        expected = np.zeros(8)
        expected[0] = 2.0 / np.sqrt(2)
        expected[4 + 2] = -1.0 / np.sqrt(2)
        np.testing.assert_allclose(out, expected)
        with pytest.raises(ValueError):
            parse_mode_string("sin:9", 4)

    def test_real_complex_roundtrip(self):
        rng = np.random.default_rng(56)
        u = rng.standard_normal(12)
        np.testing.assert_allclose(complex_to_real(real_to_complex(u)), u, atol=1e-15)


class TestKernelBackends:
    def test_convolutions_agree(self):
        rng = np.random.default_rng(57)
        for k_max in (2, 5, 16, 33):
            v = rng.standard_normal(k_max) + 1j * rng.standard_normal(k_max)
            a = kernels.convolve_quadratic(v)
            b = _burgers_np.convolve_quadratic(v)
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_trajectories_agree(self):
        rng = np.random.default_rng(58)
        v0 = 0.02 * (rng.standard_normal(12) + 1j * rng.standard_normal(12))
        forcing = 0.01 * (rng.standard_normal(12) + 1j * rng.standard_normal(12))
        a, sa = kernels.integrate_modes(v0, 0.05, forcing, 0.4, 300, 1e6)
        b, sb = _burgers_np.integrate_modes(v0, 0.05, forcing, 0.4, 300, 1e6)
        assert sa == sb == 0
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-15)

    def test_exact_viscous_decay_per_mode(self):
        v0 = np.zeros(6, dtype=complex)
        v0[2] = 0.5 + 0.25j  # a single high mode, nonlinear term inert at t=0+
        out, status = kernels.integrate_modes(1e-9 * v0, 0.1, np.zeros(6, complex), 1.0, 64, 1e6)
        expected = 1e-9 * v0[2] * np.exp(-0.1 * (2 * np.pi * 3) ** 2)
        assert status == 0
        np.testing.assert_allclose(out[2], expected, rtol=1e-6)


class TestRefinementStudy:
    def test_repeated_resolution_gives_zero_difference(self):
        problem = build_linear_spectral_problem(
            theta=1.0, b=1.0, alpha=2, centers=[0.3, 0.7], delta=0.05,
            gamma_scale=0.01, n_ref=64, mean_decay=2.0)
        out = map_refinement_study(problem, [8, 8], tol=1e-10)
        assert out["succ_diffs"][0] <= 1e-9

    def test_linear_tail_rate(self):
        """Successive differences decay like n^{-(mean_decay - 1/2)}."""
        decay = 2.0
        problem = build_linear_spectral_problem(
            theta=1.0, b=1.0, alpha=2, centers=[0.3, 0.7], delta=0.05,
            gamma_scale=0.01, n_ref=512, mean_decay=decay)
        n_list = [8, 16, 32, 64, 128]
        out = map_refinement_study(problem, n_list, tol=1e-12)
        diffs = np.array(out["succ_diffs"])
        slope = np.polyfit(np.log(n_list[:-1]), np.log(diffs), 1)[0]
        assert -decay + 0.5 - 0.3 <= slope <= -decay + 0.5 + 0.3
        values = [row.value for row in out["rows"]]
        assert all(values[i + 1] <= values[i] + 1e-10 for i in range(len(values) - 1))

    def test_burgers_instance_structure(self):
        problem, _, _ = build_burgers_problem({
            "nu": 0.05, "alpha": 2, "t_obs": 0.002,
            "obs_points": [0.125, 0.375, 0.625, 0.875], "gamma_scale": 1e-4,
            "seed": 7, "data_modes": 64, "forcing": "zero",
        })
        out = map_refinement_study(problem, [4, 8, 16], tol=1e-8)
        assert len(out["rows"]) == 3
        assert len(out["succ_diffs"]) == 2
        assert out["rows"][1].restarts == 2  # prior mean + embedded previous
        # embedding is exact zero-padding
        emb = problem.embed(np.arange(8.0), 4, 6)
        np.testing.assert_array_equal(emb, [0, 1, 2, 3, 0, 0, 4, 5, 6, 7, 0, 0])
