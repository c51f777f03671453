"""Linear Lagrange finite elements on the unit interval with Dirichlet conditions.

Provides mass/stiffness assembly, the Matern-type prior covariance
(K^{-1} M)^alpha, Crank-Nicolson heat propagation, exact local-average
observations of piecewise-linear functions, and the hat-function basis
evaluator used by the error metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import CoefficientError, DimensionError
from .space import WeightedOperator, WeightedSpace

# 2-point Gauss-Legendre rule on [-1, 1]; exact for cubics, hence exact for
# all products of linear hats with affine coefficients.
_GL2_NODES = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_GL2_WEIGHTS = np.array([1.0, 1.0])


def parse_coefficient(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """Coefficient function from a config string.

    `const:<v>` is the constant v; `affine:<a>,<b>` is x -> a + b*x.
    """
    kind, _, rest = spec.partition(":")
    if kind == "const":
        value = float(rest)
        return lambda x: np.full_like(np.asarray(x, dtype=float), value)
    if kind == "affine":
        a_str, b_str = rest.split(",")
        a, b = float(a_str), float(b_str)
        return lambda x: a + b * np.asarray(x, dtype=float)
    raise ValueError(f"unknown coefficient spec {spec!r}; use const:<v> or affine:<a>,<b>")


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of the unit interval; unknowns sit at the interior nodes."""

    n_interior: int

    def __post_init__(self):
        if self.n_interior < 1:
            raise ValueError("need at least one interior node")

    @property
    def h(self) -> float:
        return 1.0 / (self.n_interior + 1)

    @property
    def nodes(self) -> np.ndarray:
        """Interior nodes x_i = i*h, i = 1..n."""
        return self.h * np.arange(1, self.n_interior + 1)


@dataclass(frozen=True)
class Coefficients1D:
    """Elliptic coefficients Theta(x) > 0, b(x) > 0 and smoothness exponent alpha >= 1."""

    theta: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    alpha: int = 1

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be a positive integer")
        probe = np.linspace(0.0, 1.0, 33)
        if np.any(np.asarray(self.theta(probe)) <= 0) or np.any(np.asarray(self.b(probe)) < 0):
            raise CoefficientError("Theta must be positive and b nonnegative on [0, 1]")


@dataclass(frozen=True)
class HeatDiscretization:
    """One-parameter family u_0 -> u(t=1) of Crank-Nicolson heat solves."""

    dt: float
    propagator: np.ndarray = field(repr=False)

    @property
    def n_steps(self) -> int:
        return round(1.0 / self.dt)


def assemble_mass(mesh: Mesh1D) -> WeightedSpace:
    """Mass matrix M_ij = <phi_i, phi_j>: tridiagonal with 2h/3 and h/6."""
    n, h = mesh.n_interior, mesh.h
    mass = np.zeros((n, n))
    idx = np.arange(n)
    mass[idx, idx] = 2.0 * h / 3.0
    mass[idx[:-1], idx[:-1] + 1] = h / 6.0
    mass[idx[:-1] + 1, idx[:-1]] = h / 6.0
    return WeightedSpace(mass)


def assemble_stiffness(mesh: Mesh1D, coeffs: Coefficients1D) -> np.ndarray:
    """Stiffness matrix K_ij = int Theta phi_i' phi_j' + b phi_i phi_j.

    Element integrals use the 2-point Gauss rule, which is exact for affine
    Theta and b against linear hats.
    """
    n, h = mesh.n_interior, mesh.h
    # All n+1 elements [x_j, x_{j+1}], j = 0..n, with x_0 = 0 and x_{n+1} = 1.
    left = h * np.arange(0, n + 1)
    mid = left + h / 2.0
    # Quadrature points per element, shape (n_elements, 2).
    qx = mid[:, None] + (h / 2.0) * _GL2_NODES[None, :]
    qw = (h / 2.0) * _GL2_WEIGHTS
    theta_q = np.broadcast_to(np.asarray(coeffs.theta(qx), dtype=float), qx.shape)
    b_q = np.broadcast_to(np.asarray(coeffs.b(qx), dtype=float), qx.shape)
    if np.any(theta_q <= 0) or np.any(b_q < 0):
        raise CoefficientError("non-positive coefficient sampled at a quadrature node")

    # Local shapes on an element: N0 = (x_right - x)/h (left node), N1 = (x - x_left)/h.
    n1 = (qx - left[:, None]) / h
    n0 = 1.0 - n1
    grad = 1.0 / h  # |phi'| on the element; signs handled below

    k00 = (theta_q * grad * grad + b_q * n0 * n0) @ qw
    k11 = (theta_q * grad * grad + b_q * n1 * n1) @ qw
    k01 = (-theta_q * grad * grad + b_q * n0 * n1) @ qw

    stiff = np.zeros((n, n))
    # Element j couples global interior nodes j-1 (left) and j (right), 0-based.
    for elem in range(n + 1):
        li, ri = elem - 1, elem
        if li >= 0:
            stiff[li, li] += k11[elem]
        if ri < n:
            stiff[ri, ri] += k00[elem]
        if li >= 0 and ri < n:
            stiff[li, ri] += k01[elem]
            stiff[ri, li] += k01[elem]
    return stiff


def fem_prior_covariance(mesh: Mesh1D, coeffs: Coefficients1D) -> WeightedOperator:
    """Matern-type prior covariance C_0 = (K^{-1} M)^alpha on R^n_M.

    The power is formed by alpha repeated solves against the running product,
    never by explicitly powering a dense inverse.
    """
    space = assemble_mass(mesh)
    stiff = assemble_stiffness(mesh, coeffs)
    chol_k = scipy.linalg.cho_factor(stiff, lower=False)
    cov = np.eye(mesh.n_interior)
    for _ in range(coeffs.alpha):
        cov = scipy.linalg.cho_solve(chol_k, space.mass @ cov)
    return space.operator(cov)


def _banded_upper(tridiag: np.ndarray) -> np.ndarray:
    """Upper banded storage (scipy `solveh_banded` layout) of a symmetric tridiagonal."""
    n = tridiag.shape[0]
    ab = np.zeros((2, n))
    ab[1] = np.diag(tridiag)
    ab[0, 1:] = np.diag(tridiag, 1)
    return ab


def _tridiag_matmul(tridiag: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """Product of a symmetric tridiagonal with a dense matrix in O(n^2)."""
    d = np.diag(tridiag)[:, None]
    e = np.diag(tridiag, 1)
    out = d * dense
    out[:-1] += e[:, None] * dense[1:]
    out[1:] += e[:, None] * dense[:-1]
    return out


def crank_nicolson_propagator(mesh: Mesh1D, dt: float) -> HeatDiscretization:
    """Crank-Nicolson solution map G for the heat equation up to t = 1.

    One step maps v to (M + K dt/2)^{-1} (M - K dt/2) v with K the plain
    Laplacian stiffness (Theta = 1, b = 0); G applies 1/dt such steps, so a
    generalized eigenmode of (K, M) with eigenvalue lam is damped by
    ((1 - lam dt/2)/(1 + lam dt/2))^{1/dt}. The scheme is A-stable: the
    damping factor has modulus at most one for every lam > 0.
    """
    n_steps = round(1.0 / dt)
    if abs(n_steps * dt - 1.0) > 1e-12 or n_steps < 1:
        raise ValueError(f"1/dt must be an integer, got dt={dt}")
    space = assemble_mass(mesh)
    laplace = Coefficients1D(theta=lambda x: np.ones_like(x), b=lambda x: np.zeros_like(x))
    stiff = assemble_stiffness(mesh, laplace)
    implicit = space.mass + stiff * (dt / 2.0)
    explicit = space.mass - stiff * (dt / 2.0)
    ab = _banded_upper(implicit)
    prop = np.eye(mesh.n_interior)
    for _ in range(n_steps):
        prop = scipy.linalg.solveh_banded(ab, _tridiag_matmul(explicit, prop))
    return HeatDiscretization(dt=dt, propagator=prop)


def hat_antiderivative(mesh: Mesh1D, x: np.ndarray) -> np.ndarray:
    """Running integrals int_0^x phi_i for all interior hats; shape (len(x), n)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = mesh.h
    centers = mesh.nodes
    s = (x[:, None] - centers[None, :]) / h  # signed distance in element units
    rising = 0.5 * np.clip(s + 1.0, 0.0, 1.0) ** 2
    falling = 0.5 * (1.0 - np.clip(1.0 - np.clip(s, 0.0, 1.0), 0.0, 1.0) ** 2)
    return h * (rising + falling)


def observation_matrix(mesh: Mesh1D, centers, delta: float) -> np.ndarray:
    """Rows are exact integrals of each hat over [c - delta, c + delta] clipped to [0, 1]."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    centers = np.asarray(centers, dtype=float)
    lo = np.clip(centers - delta, 0.0, 1.0)
    hi = np.clip(centers + delta, 0.0, 1.0)
    return hat_antiderivative(mesh, hi) - hat_antiderivative(mesh, lo)


def observe_local_average(mesh: Mesh1D, coeffs: np.ndarray, centers, delta: float) -> np.ndarray:
    """Local-average observations of the piecewise-linear extension of `coeffs`.

    Entry j is the exact integral of the function over [c_j - delta, c_j + delta]
    intersected with [0, 1]; an empty intersection yields 0.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (mesh.n_interior,):
        raise DimensionError(
            f"coefficients have shape {coeffs.shape}, mesh has {mesh.n_interior} nodes"
        )
    return observation_matrix(mesh, centers, delta) @ coeffs


def fem_forward(mesh: Mesh1D, dt: float, centers, delta: float) -> np.ndarray:
    """Discretized forward model F = O G: propagate to t = 1, then observe."""
    heat = crank_nicolson_propagator(mesh, dt)
    return observation_matrix(mesh, centers, delta) @ heat.propagator


class HatBasis:
    """Piecewise-linear extension map for the interior hat functions."""

    def __init__(self, mesh: Mesh1D):
        self.mesh = mesh

    def evaluate(self, coeffs: np.ndarray, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = self.mesh.h
        padded = np.concatenate(([0.0], np.asarray(coeffs, dtype=float), [0.0]))
        elem = np.clip((x / h).astype(int), 0, self.mesh.n_interior)
        local = x / h - elem
        return padded[elem] * (1.0 - local) + padded[elem + 1] * local

    def cross_gram(self, reference) -> np.ndarray:
        """X_{ki} = <psi_k, phi_i> for interval sine modes psi_k = sqrt(2) sin(k pi x).

        Closed form: sqrt(2) * 4 sin(k pi x_i) sin^2(k pi h / 2) / (k^2 pi^2 h).
        """
        if reference.domain != "interval":
            raise ValueError("hat basis pairs with the interval reference")
        k = reference.wavenumbers[:, None].astype(float)
        x = self.mesh.nodes[None, :]
        h = self.mesh.h
        return np.sqrt(2.0) * 4.0 * np.sin(k * np.pi * x) * np.sin(k * np.pi * h / 2.0) ** 2 / (
            k**2 * np.pi**2 * h
        )


def generalized_eigenvalues(mesh: Mesh1D, coeffs: Coefficients1D) -> np.ndarray:
    """Ascending generalized eigenvalues of (K, M); the discrete elliptic spectrum."""
    space = assemble_mass(mesh)
    stiff = assemble_stiffness(mesh, coeffs)
    return scipy.linalg.eigvalsh(stiff, space.mass)
