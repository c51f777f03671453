"""Finite element assembly, Matern prior, Crank-Nicolson propagation, observations."""

import numpy as np
import pytest
import scipy.linalg

from wispi.errors import CoefficientError, DimensionError
from wispi.fem import (
    Coefficients1D,
    HatBasis,
    Mesh1D,
    assemble_mass,
    assemble_stiffness,
    crank_nicolson_propagator,
    fem_forward,
    fem_prior_covariance,
    generalized_eigenvalues,
    observation_matrix,
    observe_local_average,
    parse_coefficient,
)
from wispi.space import adjoint_operator, operator_norm_m


def ones(x):
    return np.ones_like(x)


def zeros(x):
    return np.zeros_like(x)


LAPLACE = Coefficients1D(theta=ones, b=zeros)
HELMHOLTZ = Coefficients1D(theta=ones, b=ones, alpha=2)


class TestParseCoefficient:
    def test_const(self):
        f = parse_coefficient("const:2.5")
        np.testing.assert_allclose(f(np.array([0.0, 1.0])), 2.5)

    def test_affine(self):
        f = parse_coefficient("affine:1.0,2.0")
        np.testing.assert_allclose(f(np.array([0.0, 0.5])), [1.0, 2.0])

    def test_unknown(self):
        with pytest.raises(ValueError):
            parse_coefficient("quadratic:1")


class TestMass:
    def test_exact_h_third(self):
        space = assemble_mass(Mesh1D(2))
        np.testing.assert_allclose(space.mass, [[2 / 9, 1 / 18], [1 / 18, 2 / 9]], rtol=1e-15)

    def test_single_node(self):
        space = assemble_mass(Mesh1D(1))
        np.testing.assert_allclose(space.mass, [[1 / 3]], rtol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 7, 33])
    def test_symmetric_spd(self, n):
        space = assemble_mass(Mesh1D(n))  # construction runs the Cholesky check
        assert np.array_equal(space.mass, space.mass.T)


class TestStiffness:
    def test_laplacian_h_third(self):
        k = assemble_stiffness(Mesh1D(2), LAPLACE)
        np.testing.assert_allclose(k, [[6.0, -3.0], [-3.0, 6.0]], rtol=1e-14)

    def test_reaction_term_adds_mass(self):
        mesh = Mesh1D(9)
        k_full = assemble_stiffness(mesh, Coefficients1D(ones, ones))
        k_lap = assemble_stiffness(mesh, LAPLACE)
        mass = assemble_mass(mesh).mass
        assert np.abs(k_full - (k_lap + mass)).max() <= 1e-10

    def test_theta_scaling_exact(self):
        mesh = Mesh1D(5)
        k1 = assemble_stiffness(mesh, LAPLACE)
        k2 = assemble_stiffness(mesh, Coefficients1D(lambda x: 2.0 * np.ones_like(x), zeros))
        np.testing.assert_array_equal(k2, 2.0 * k1)

    def test_affine_coefficients_match_quadrature_oracle(self):
        mesh = Mesh1D(4)
        theta = parse_coefficient("affine:1.0,0.5")
        b = parse_coefficient("affine:0.5,1.0")
        k = assemble_stiffness(mesh, Coefficients1D(theta, b))
        nodes, weights = np.polynomial.legendre.leggauss(64)
        h = mesh.h

        def hat(i, x):
            return np.clip(1.0 - np.abs(x - mesh.nodes[i]) / h, 0.0, None)

        def dhat(i, x):
            return np.where(
                (x > mesh.nodes[i] - h) & (x <= mesh.nodes[i]), 1.0 / h,
                np.where((x > mesh.nodes[i]) & (x < mesh.nodes[i] + h), -1.0 / h, 0.0),
            )

        oracle = np.zeros_like(k)
        for elem in range(5):
            lo, hi = elem * h, (elem + 1) * h
            x = (lo + hi) / 2 + (hi - lo) / 2 * nodes
            w = (hi - lo) / 2 * weights
            for i in range(4):
                for j in range(4):
                    oracle[i, j] += np.sum(
                        w * (theta(x) * dhat(i, x) * dhat(j, x) + b(x) * hat(i, x) * hat(j, x))
                    )
        np.testing.assert_allclose(k, oracle, atol=1e-12)

    def test_negative_coefficient_raises(self):
        class BadCoeffs:
            theta = staticmethod(lambda x: -np.ones_like(x))
            b = staticmethod(zeros)
            alpha = 1

        with pytest.raises(CoefficientError):
            assemble_stiffness(Mesh1D(3), BadCoeffs())
        with pytest.raises(CoefficientError):
            Coefficients1D(theta=ones, b=lambda x: -np.ones_like(x))


class TestPriorCovariance:
    def test_alpha_one_is_galerkin_solve(self):
        mesh = Mesh1D(7)
        space = assemble_mass(mesh)
        coeffs = Coefficients1D(ones, ones, alpha=1)
        cov = fem_prior_covariance(mesh, coeffs)
        stiff = assemble_stiffness(mesh, coeffs)
        rng = np.random.default_rng(40)
        f_vec = rng.standard_normal(7)
        oracle = np.linalg.solve(stiff, space.mass @ f_vec)
        np.testing.assert_allclose(cov.matrix @ f_vec, oracle, rtol=1e-11)

    def test_alpha_two_matches_repeated_solve(self):
        mesh = Mesh1D(6)
        cov = fem_prior_covariance(mesh, HELMHOLTZ)
        space = assemble_mass(mesh)
        stiff = assemble_stiffness(mesh, Coefficients1D(ones, ones))
        one_solve = np.linalg.solve(stiff, space.mass)
        np.testing.assert_allclose(cov.matrix, one_solve @ one_solve, atol=1e-10)

    def test_discrete_spectrum_overestimates(self):
        lams = generalized_eigenvalues(Mesh1D(3), LAPLACE)  # h = 1/4
        assert lams[0] >= np.pi**2

    def test_self_adjoint_and_spd(self):
        mesh = Mesh1D(12)
        cov = fem_prior_covariance(mesh, HELMHOLTZ)
        residual = np.linalg.norm(cov.matrix - adjoint_operator(cov).matrix)
        assert residual <= 1e-9
        eigs = scipy.linalg.eigvalsh(
            (assemble_mass(mesh).mass @ cov.matrix
             + (assemble_mass(mesh).mass @ cov.matrix).T) / 2.0
        )
        assert eigs[0] > 0

    def test_trace_monotone_and_bounded_by_analytic(self):
        analytic = np.sum(((np.arange(1, 400001) * np.pi) ** 2 + 1.0) ** -2.0)
        traces = []
        for n in [7, 15, 31, 63]:
            cov = fem_prior_covariance(Mesh1D(n), HELMHOLTZ)
            traces.append(np.trace(cov.matrix))
        assert all(traces[i + 1] > traces[i] for i in range(len(traces) - 1))
        assert all(t < analytic for t in traces)

    def test_elliptic_operator_self_adjoint_both_ways(self):
        mesh = Mesh1D(9)
        space = assemble_mass(mesh)
        stiff = assemble_stiffness(mesh, Coefficients1D(ones, ones))
        forward_op = space.operator(space.solve_mass(stiff))      # M^{-1} K
        inverse_op = space.operator(np.linalg.solve(stiff, space.mass))  # K^{-1} M
        for op in (forward_op, inverse_op):
            assert np.linalg.norm(op.matrix - adjoint_operator(op).matrix) <= 1e-9


class TestCrankNicolson:
    def test_zero_stays_zero(self):
        heat = crank_nicolson_propagator(Mesh1D(5), 1 / 4)
        np.testing.assert_array_equal(heat.propagator @ np.zeros(5), np.zeros(5))

    def test_eigenmode_amplification(self):
        mesh = Mesh1D(7)
        space = assemble_mass(mesh)
        stiff = assemble_stiffness(mesh, LAPLACE)
        lams, vecs = scipy.linalg.eigh(stiff, space.mass)
        heat = crank_nicolson_propagator(mesh, 1 / 8)
        for k in range(3):
            rho = ((1 - lams[k] / 16) / (1 + lams[k] / 16)) ** 8
            vec = vecs[:, k]
            assert space.norm(heat.propagator @ vec - rho * vec) <= 1e-10

    def test_scalar_amplification_second_order_in_dt(self):
        lam = generalized_eigenvalues(Mesh1D(7), LAPLACE)[0]
        dts = np.array([1 / 8, 1 / 16, 1 / 32, 1 / 64])
        errs = [
            abs(((1 - lam * dt / 2) / (1 + lam * dt / 2)) ** round(1 / dt) - np.exp(-lam))
            for dt in dts
        ]
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert 1.7 <= slope <= 2.3

    def test_unconditional_stability(self):
        for n, dt in [(5, 1 / 2), (15, 1 / 4), (31, 1 / 2)]:
            mesh = Mesh1D(n)
            heat = crank_nicolson_propagator(mesh, dt)
            norm = operator_norm_m(assemble_mass(mesh).operator(heat.propagator))
            assert norm <= 1.0 + 1e-10

    def test_non_integer_step_count_rejected(self):
        with pytest.raises(ValueError):
            crank_nicolson_propagator(Mesh1D(3), 0.3)


class TestLocalAverages:
    def test_ball_outside_hat_supports(self):
        coeffs = np.zeros(9)
        coeffs[3] = 1.0
        out = observe_local_average(Mesh1D(9), coeffs, [0.9], 0.05)
        np.testing.assert_array_equal(out, [0.0])

    def test_full_hat_integral(self):
        mesh = Mesh1D(9)
        coeffs = np.zeros(9)
        coeffs[3] = 1.0  # hat at x = 0.4
        out = observe_local_average(mesh, coeffs, [0.4], 0.2)
        np.testing.assert_allclose(out, [mesh.h], rtol=1e-14)

    def test_constant_plateau(self):
        out = observe_local_average(Mesh1D(9), np.ones(9), [0.5], 0.05)
        np.testing.assert_allclose(out, [2 * 0.05 * 1.0], rtol=1e-13)

    def test_matches_quadrature_oracle(self):
        mesh = Mesh1D(7)
        rng = np.random.default_rng(41)
        coeffs = rng.standard_normal(7)
        centers, delta = [0.17, 0.52, 0.97], 0.08
        basis = HatBasis(mesh)
        nodes, weights = np.polynomial.legendre.leggauss(64)
        oracle = []
        for c in centers:
            lo, hi = max(c - delta, 0.0), min(c + delta, 1.0)
            # integrate element by element so the kinks are resolved exactly
            total = 0.0
            breaks = np.unique(np.clip(np.arange(9) * mesh.h, lo, hi))
            breaks = np.unique(np.concatenate([[lo], breaks, [hi]]))
            for a, b in zip(breaks[:-1], breaks[1:]):
                if b <= a:
                    continue
                x = (a + b) / 2 + (b - a) / 2 * nodes
                total += np.sum((b - a) / 2 * weights * basis.evaluate(coeffs, x))
            oracle.append(total)
        out = observe_local_average(mesh, coeffs, centers, delta)
        np.testing.assert_allclose(out, oracle, atol=1e-12)

    def test_clipping_at_boundary(self):
        mesh = Mesh1D(9)
        out = observe_local_average(mesh, np.ones(9), [0.02], 0.05)
        oracle = observation_matrix(mesh, [0.02], 0.05) @ np.ones(9)
        np.testing.assert_allclose(out, oracle)
        assert out[0] < 2 * 0.05  # window clipped at x = 0

    def test_dimension_check(self):
        with pytest.raises(DimensionError):
            observe_local_average(Mesh1D(5), np.ones(4), [0.5], 0.1)


class TestForwardMap:
    def test_zero_initial_data(self):
        forward = fem_forward(Mesh1D(7), 1 / 8, [0.3, 0.6], 0.05)
        np.testing.assert_array_equal(forward @ np.zeros(7), np.zeros(2))

    def test_linearity(self):
        forward = fem_forward(Mesh1D(9), 1 / 16, [0.25, 0.5, 0.75], 0.05)
        rng = np.random.default_rng(42)
        u, v = rng.standard_normal(9), rng.standard_normal(9)
        lhs = forward @ (2.0 * u + 3.0 * v)
        rhs = 2.0 * (forward @ u) + 3.0 * (forward @ v)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestHatBasis:
    def test_nodal_interpolation(self):
        mesh = Mesh1D(4)
        basis = HatBasis(mesh)
        coeffs = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_allclose(basis.evaluate(coeffs, mesh.nodes), coeffs)
        np.testing.assert_allclose(basis.evaluate(coeffs, [0.0, 1.0]), [0.0, 0.0])

    def test_linear_in_coefficients(self):
        basis = HatBasis(Mesh1D(6))
        rng = np.random.default_rng(43)
        u, v = rng.standard_normal(6), rng.standard_normal(6)
        x = rng.uniform(0, 1, size=11)
        np.testing.assert_allclose(
            basis.evaluate(2.0 * u - v, x),
            2.0 * basis.evaluate(u, x) - basis.evaluate(v, x),
            atol=1e-14,
        )

    def test_midpoint_value(self):
        mesh = Mesh1D(3)
        coeffs = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(HatBasis(mesh).evaluate(coeffs, [0.125]), [0.5])
