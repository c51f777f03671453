"""Ensemble Kalman approximation of the weighted-space Gaussian posterior.

Prior samples come from a factor L with C_0 = L L^T M; the perturbed
observation update transforms each member with the sample-covariance Kalman
gain and independently noised data. All randomness flows through per-member
substreams spawned from one master seed, so serial and parallel execution
agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConditioningError, DegenerateError, DimensionError, EnsembleSizeError, FactorError
from .gaussian import ObservationModel
from .space import WeightedOperator, WeightedSpace, operator_norm_m, weighted_trace


@dataclass(frozen=True)
class Ensemble:
    """J coefficient vectors in R^n_M, stored as columns of `members`."""

    members: np.ndarray = field(repr=False)  # n x J
    space: WeightedSpace
    seed: int

    def __post_init__(self):
        if self.members.ndim != 2 or self.members.shape[0] != self.space.n:
            raise DimensionError(
                f"members have shape {self.members.shape}, expected ({self.space.n}, J)"
            )
        if self.members.shape[1] < 2:
            raise EnsembleSizeError("an ensemble needs at least two members")

    @property
    def size(self) -> int:
        return self.members.shape[1]


@dataclass(frozen=True)
class PriorFactor:
    """Factor L with C_0 = L L^T M."""

    l_matrix: np.ndarray = field(repr=False)
    space: WeightedSpace


def factor_prior(cov: WeightedOperator) -> PriorFactor:
    """Factor the prior covariance as C_0 = L L^T M.

    L is the Euclidean Cholesky factor of C_0^E = C_0 M^{-1}; if C_0^E is only
    semidefinite, an eigenvalue-clamped symmetric square root is used instead.
    Eigenvalues below -1e-10 (relative) are an error.
    """
    space = cov.space
    cov_e = space.solve_mass(cov.matrix.T).T
    cov_e = (cov_e + cov_e.T) / 2.0
    try:
        l_matrix = scipy.linalg.cholesky(cov_e, lower=True)
    except scipy.linalg.LinAlgError:
        eigvals, eigvecs = scipy.linalg.eigh(cov_e)
        if eigvals[0] < -1e-10 * max(1.0, eigvals[-1]):
            raise FactorError(
                f"Euclidean prior covariance indefinite: eigenvalue {eigvals[0]:.3e}"
            ) from None
        l_matrix = eigvecs * np.sqrt(np.maximum(eigvals, 0.0))
    return PriorFactor(l_matrix=l_matrix, space=space)


def _member_rngs(seed: int, count: int) -> list:
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def sample_prior(factor: PriorFactor, m0: np.ndarray, j_members: int, seed: int) -> Ensemble:
    """Draw u_j = m0 + L xi_j with xi_j standard normal, one substream per member."""
    m0 = np.asarray(m0, dtype=float)
    n = factor.space.n
    if m0.shape != (n,):
        raise DimensionError(f"mean has shape {m0.shape}, expected ({n},)")
    xi = np.column_stack([rng.standard_normal(n) for rng in _member_rngs(seed, j_members)])
    return Ensemble(members=m0[:, None] + factor.l_matrix @ xi, space=factor.space, seed=seed)


def weighted_sample_stats(ens: Ensemble) -> dict:
    """Sample mean and sample covariance (1/(J-1)) sum (u - m)(u - m)^T M."""
    if ens.size < 2:
        raise EnsembleSizeError("sample covariance needs J >= 2")
    mean = ens.members.mean(axis=1)
    centered = ens.members - mean[:, None]
    cov = (centered @ centered.T) @ ens.space.mass / (ens.size - 1)
    return {"mean": ens.space.vector(mean), "cov": ens.space.operator(cov)}


def eki_update(ens: Ensemble, obs: ObservationModel, seed: int, *,
               cov_override: WeightedOperator | None = None,
               perturb: bool = True) -> Ensemble:
    """Perturbed-observation Kalman transform of every ensemble member.

    v_j = u_j + C-hat F^nat (F C-hat F^nat + Gamma)^{-1} (y - F u_j + eta_j),
    eta_j ~ N(0, Gamma) from per-member substreams. The sample covariance is
    applied in its factored low-rank form, so no n x n matrix is inverted;
    `cov_override` replaces the sample covariance (used by exactness checks)
    and `perturb=False` forces eta = 0.
    """
    space = ens.space
    forward = obs.forward
    if forward.shape[1] != space.n:
        raise DimensionError("forward map and ensemble dimension mismatch")
    mean = ens.members.mean(axis=1)
    if cov_override is not None:
        cf = cov_override.matrix @ space.solve_mass(forward.T)
        innovation_mat = forward @ cf + obs.gamma
    else:
        # With C-hat = (1/(J-1)) A A^T M the weighted adjoint cancels M:
        # C-hat F^nat = (1/(J-1)) A (F A)^T.
        centered = ens.members - mean[:, None]
        fa = forward @ centered
        cf = centered @ fa.T / (ens.size - 1)
        innovation_mat = fa @ fa.T / (ens.size - 1) + obs.gamma
    try:
        factor = scipy.linalg.cho_factor((innovation_mat + innovation_mat.T) / 2.0)
    except scipy.linalg.LinAlgError as exc:
        raise ConditioningError("ensemble innovation matrix not positive definite") from exc
    if perturb:
        gamma_root = scipy.linalg.cholesky(obs.gamma, lower=True)
        eta = gamma_root @ np.column_stack(
            [rng.standard_normal(obs.d_y) for rng in _member_rngs(seed, ens.size)]
        )
    else:
        eta = np.zeros((obs.d_y, ens.size))
    residuals = obs.y[:, None] - forward @ ens.members + eta
    updated = ens.members + cf @ scipy.linalg.cho_solve(factor, residuals)
    return Ensemble(members=updated, space=space, seed=seed)


def effective_dimension(cov: WeightedOperator) -> float:
    """Tr(C) / |C|_op on R^n_M; between 1 and n for PSD covariances."""
    norm = operator_norm_m(cov)
    if norm <= 1e-300:
        raise DegenerateError("effective dimension of the zero operator is undefined")
    return weighted_trace(cov) / norm
