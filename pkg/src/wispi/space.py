"""Linear algebra of the weighted inner-product space R^n_M.

The coefficient space of a non-orthonormal basis {phi_i} carries the inner
product <u, v>_M = u^T M v, with M the basis Gram (mass) matrix. Adjoints,
operator norms and traces taken here agree with the ones of the underlying
function-space operators, which is the whole point of working on R^n_M
instead of plain R^n.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
import scipy.linalg

from .errors import ConditioningError, DimensionError

CONDITION_LIMIT = 1e12


class WeightedSpace:
    """R^n with inner product u^T M v for a fixed SPD mass matrix M.

    M must be exactly symmetric as stored; positive definiteness is checked
    at construction via a Cholesky factorization. Instances are immutable
    after construction and safe to share across threads.
    """

    def __init__(self, mass: np.ndarray):
        mass = np.asarray(mass, dtype=float)
        if mass.ndim != 2 or mass.shape[0] != mass.shape[1]:
            raise DimensionError(f"mass matrix must be square, got {mass.shape}")
        if not np.array_equal(mass, mass.T):
            raise ValueError("mass matrix must be exactly symmetric as stored")
        self.n = mass.shape[0]
        self.mass = mass
        self.mass.setflags(write=False)
        try:
            # Upper-triangular factor R with M = R^T R; also the SPD check.
            self._chol = scipy.linalg.cholesky(mass, lower=False)
        except scipy.linalg.LinAlgError as exc:
            raise ValueError("mass matrix is not positive definite") from exc
        self._cond = None

    @property
    def chol_upper(self) -> np.ndarray:
        """Upper-triangular R with M = R^T R."""
        return self._chol

    def condition_estimate(self) -> float:
        """2-norm condition number of M (cached; diagonal fast path)."""
        if self._cond is None:
            diag = np.diag(self.mass)
            if np.count_nonzero(self.mass - np.diag(diag)) == 0:
                self._cond = float(diag.max() / diag.min())
            else:
                eigs = scipy.linalg.eigvalsh(self.mass)
                self._cond = float(eigs[-1] / eigs[0])
        return self._cond

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        """M^{-1} rhs via the cached Cholesky factor."""
        return scipy.linalg.cho_solve((self._chol, False), rhs)

    def vector(self, coeffs) -> "WeightedVector":
        return WeightedVector(np.asarray(coeffs, dtype=float), self)

    def operator(self, matrix) -> "WeightedOperator":
        return WeightedOperator(np.asarray(matrix, dtype=float), self)

    def norm(self, coeffs: np.ndarray) -> float:
        coeffs = np.asarray(coeffs, dtype=float)
        return float(np.linalg.norm(self._chol @ coeffs))

    def __eq__(self, other):
        return isinstance(other, WeightedSpace) and np.array_equal(self.mass, other.mass)

    def __repr__(self):
        return f"WeightedSpace(n={self.n})"


class WeightedVector:
    """Coefficient vector of u = sum_i u_i phi_i, tied to its space."""

    def __init__(self, coeffs: np.ndarray, space: WeightedSpace):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim != 1 or coeffs.shape[0] != space.n:
            raise DimensionError(
                f"coefficient vector has length {coeffs.shape}, space dimension is {space.n}"
            )
        self.coeffs = coeffs
        self.space = space

    def norm(self) -> float:
        return self.space.norm(self.coeffs)

    def __repr__(self):
        return f"WeightedVector(n={self.space.n})"


class WeightedOperator:
    """Square matrix acting on R^n_M."""

    def __init__(self, matrix: np.ndarray, space: WeightedSpace):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (space.n, space.n):
            raise DimensionError(
                f"operator has shape {matrix.shape}, space dimension is {space.n}"
            )
        self.matrix = matrix
        self.space = space

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix @ coeffs

    def __repr__(self):
        return f"WeightedOperator(n={self.space.n})"


class BasisEvaluator(ABC):
    """Evaluation contract for the extension map: (coefficients, x) -> value.

    Concrete bases (piecewise-linear hats on the interval, piecewise-constant
    cells on the circle, trigonometric modes) implement pointwise evaluation,
    which must be linear in the coefficients, and the cross-Gram against an
    analytic mode family used by the error metrics.
    """

    @abstractmethod
    def evaluate(self, coeffs: np.ndarray, x) -> np.ndarray:
        """Value of sum_i coeffs_i phi_i at point(s) x."""

    @abstractmethod
    def cross_gram(self, reference) -> np.ndarray:
        """Matrix X with X_{ki} = <psi_k, phi_i>_{L^2} against reference modes."""


def weighted_inner(u: WeightedVector, v: WeightedVector) -> float:
    """<u, v>_M = u^T M v. Symmetric and bilinear."""
    if u.space is not v.space and u.space != v.space:
        raise DimensionError("vectors live in different weighted spaces")
    return float(u.coeffs @ (u.space.mass @ v.coeffs))


def discretize(projection_rhs: np.ndarray, space: WeightedSpace) -> WeightedVector:
    """Orthogonal-projection coefficients from the moments b_i = <u, phi_i>.

    Solves M u = b; this is the coefficient vector of the best approximation
    of u in the basis span.
    """
    b = np.asarray(projection_rhs, dtype=float)
    if b.shape != (space.n,):
        raise DimensionError(f"rhs has shape {b.shape}, expected ({space.n},)")
    if space.condition_estimate() > CONDITION_LIMIT:
        raise ConditioningError(
            f"mass matrix condition estimate {space.condition_estimate():.3e} exceeds "
            f"{CONDITION_LIMIT:.0e}"
        )
    return space.vector(space.solve_mass(b))


def adjoint_forward(forward: np.ndarray, space: WeightedSpace) -> np.ndarray:
    """Adjoint M^{-1} F^T of a map F: R^n_M -> R^{d_y}.

    Satisfies <F u, y>_2 = <u, adjoint y>_M for all u, y.
    """
    forward = np.asarray(forward, dtype=float)
    if forward.ndim != 2 or forward.shape[1] != space.n:
        raise DimensionError(
            f"forward map has shape {forward.shape}, expected (d_y, {space.n})"
        )
    return space.solve_mass(forward.T)


def adjoint_operator(op: WeightedOperator) -> WeightedOperator:
    """Adjoint M^{-1} A^T M of an operator on R^n_M."""
    space = op.space
    return space.operator(space.solve_mass(op.matrix.T @ space.mass))


def operator_norm_m(op: WeightedOperator) -> float:
    """Operator norm sup_{u != 0} |A u|_M / |u|_M.

    Computed as the 2-norm of the similarity transform R A R^{-1} with
    R the Cholesky factor of M, which reduces the weighted norm to a
    Euclidean one.
    """
    r = op.space.chol_upper
    transformed = scipy.linalg.solve_triangular(r.T, (r @ op.matrix).T, lower=True).T
    return float(np.linalg.norm(transformed, 2))


def weighted_trace(op: WeightedOperator) -> float:
    """Trace of A; equals the trace of the similar matrix R A R^{-1}."""
    return float(np.trace(op.matrix))


def symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, eigenvalues clamped at 0."""
    matrix = np.asarray(matrix, dtype=float)
    eigvals, eigvecs = scipy.linalg.eigh(matrix)
    return (eigvecs * np.sqrt(np.maximum(eigvals, 0.0))) @ eigvecs.T


def mixed_norm(matrix: np.ndarray, space_in: WeightedSpace | None,
               space_out: WeightedSpace | None) -> float:
    """Operator 2-norm between weighted and/or Euclidean spaces.

    `space_in` / `space_out` of None means the plain Euclidean inner product
    on that side. Used for the Kalman-gain continuity constants, where the
    forward map goes R^n_M -> R^{d_y} and the gain goes R^{d_y} -> R^n_M.
    """
    a = np.asarray(matrix, dtype=float)
    if space_out is not None:
        a = space_out.chol_upper @ a
    if space_in is not None:
        a = scipy.linalg.solve_triangular(space_in.chol_upper.T, a.T, lower=True).T
    return float(np.linalg.norm(a, 2))
