"""Exact linear-Gaussian posterior updates on R^n_M.

Both the weighted-space form (through the adjoint F^nat = M^{-1} F^T) and the
Euclidean form (through C^E = C M^{-1} and F^T) are provided; they describe
the same measure and are cross-checked in the tests. The Kalman gain is
exposed separately together with the constants of its continuity bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConditioningError, DimensionError
from .space import (
    WeightedOperator,
    WeightedSpace,
    WeightedVector,
    adjoint_forward,
    mixed_norm,
    operator_norm_m,
)


class GaussianMeasure:
    """Gaussian measure on R^n_M with mean vector and covariance operator.

    The covariance must be self-adjoint on R^n_M and positive semidefinite
    (both checked at construction unless `validate=False`).
    """

    def __init__(self, mean: WeightedVector, cov: WeightedOperator, validate: bool = True):
        if mean.space != cov.space:
            raise DimensionError("mean and covariance live in different spaces")
        self.mean = mean
        self.cov = cov
        self.space = mean.space
        if validate:
            mc = self.space.mass @ cov.matrix
            scale = max(1.0, float(np.linalg.norm(mc)))
            residual = float(np.linalg.norm(mc - mc.T))
            if residual > 1e-9 * scale:
                raise ValueError(f"covariance not self-adjoint on R^n_M: residual {residual:.3e}")
            eigs = scipy.linalg.eigvalsh((mc + mc.T) / 2.0)
            if eigs[0] < -1e-9 * max(1.0, eigs[-1]):
                raise ValueError(f"covariance indefinite: smallest M-eigenvalue {eigs[0]:.3e}")


@dataclass(frozen=True)
class ObservationModel:
    """Linear observations y = F u + eta with eta ~ N(0, Gamma)."""

    forward: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    y: np.ndarray

    def __post_init__(self):
        forward = np.asarray(self.forward, dtype=float)
        gamma = np.asarray(self.gamma, dtype=float)
        y = np.asarray(self.y, dtype=float)
        d_y = forward.shape[0]
        if gamma.shape != (d_y, d_y):
            raise DimensionError(f"Gamma has shape {gamma.shape}, expected ({d_y}, {d_y})")
        if y.shape != (d_y,):
            raise DimensionError(f"data has shape {y.shape}, expected ({d_y},)")
        scipy.linalg.cholesky(gamma)  # SPD check
        object.__setattr__(self, "forward", forward)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "y", y)

    @property
    def d_y(self) -> int:
        return self.forward.shape[0]


def _innovation_factor(s: np.ndarray):
    """Cholesky of the innovation matrix F C F* + Gamma."""
    try:
        return scipy.linalg.cho_factor((s + s.T) / 2.0, lower=False)
    except scipy.linalg.LinAlgError as exc:
        raise ConditioningError("innovation matrix is not positive definite") from exc


def posterior_weighted(prior: GaussianMeasure, obs: ObservationModel) -> GaussianMeasure:
    """Posterior mean and covariance computed in the weighted space.

    m_post = m0 + C0 F^nat (F C0 F^nat + Gamma)^{-1} (y - F m0),
    C_post = C0 - C0 F^nat (F C0 F^nat + Gamma)^{-1} F C0.
    """
    space = prior.space
    if obs.forward.shape[1] != space.n:
        raise DimensionError("forward map and prior dimension mismatch")
    cov = prior.cov.matrix
    f_nat = adjoint_forward(obs.forward, space)
    cf = cov @ f_nat  # n x d_y
    innov_factor = _innovation_factor(obs.forward @ cf + obs.gamma)
    gain = scipy.linalg.cho_solve(innov_factor, cf.T).T
    mean = prior.mean.coeffs + gain @ (obs.y - obs.forward @ prior.mean.coeffs)
    post_cov = cov - gain @ (obs.forward @ cov)
    return GaussianMeasure(space.vector(mean), space.operator(post_cov))


def posterior_euclidean(prior: GaussianMeasure, obs: ObservationModel) -> GaussianMeasure:
    """Same posterior through the Euclidean parameterization C^E = C M^{-1}, F^T.

    The returned measure stores the covariance back in weighted form,
    C_post = C_post^E M; its mean agrees with the weighted route to rounding.
    """
    space = prior.space
    if obs.forward.shape[1] != space.n:
        raise DimensionError("forward map and prior dimension mismatch")
    cov_e = space.solve_mass(prior.cov.matrix.T).T  # C0 M^{-1}, symmetric
    cf = cov_e @ obs.forward.T
    innov_factor = _innovation_factor(obs.forward @ cf + obs.gamma)
    gain = scipy.linalg.cho_solve(innov_factor, cf.T).T
    mean = prior.mean.coeffs + gain @ (obs.y - obs.forward @ prior.mean.coeffs)
    post_cov_e = cov_e - gain @ (obs.forward @ cov_e)
    return GaussianMeasure(space.vector(mean), space.operator(post_cov_e @ space.mass))


def kalman_gain(cov: WeightedOperator, forward: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Gain C F^nat (F C F^nat + Gamma)^{-1} mapping innovations to mean updates."""
    forward = np.asarray(forward, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if forward.shape[1] != cov.space.n:
        raise DimensionError("forward map and covariance dimension mismatch")
    cf = cov.matrix @ adjoint_forward(forward, cov.space)
    innov_factor = _innovation_factor(forward @ cf + gamma)
    return scipy.linalg.cho_solve(innov_factor, cf.T).T


def gain_continuity_constants(cov1: WeightedOperator, forward1: np.ndarray,
                              cov2: WeightedOperator, forward2: np.ndarray,
                              gamma: np.ndarray) -> tuple[float, float]:
    """Constants (c1, c2) of the Kalman-gain Lipschitz bound.

    c1 = |G^-1| |F2| + |G^-1|^2 |C1| |F1| |F2|^2,
    c2 = |G^-1| |C1| + |G^-1|^2 |C1|^2 |F1|^2 + |G^-1| |C1|^2 |F1| |F2|,
    with all norms the operator norms of maps between R^n_M and the Euclidean
    data space.
    """
    space = cov1.space
    g_inv = float(np.linalg.norm(np.linalg.inv(gamma), 2))
    nc1 = operator_norm_m(cov1)
    nf1 = mixed_norm(forward1, space, None)
    nf2 = mixed_norm(forward2, space, None)
    c1 = g_inv * nf2 + g_inv**2 * nc1 * nf1 * nf2**2
    c2 = g_inv * nc1 + g_inv**2 * nc1**2 * nf1**2 + g_inv * nc1**2 * nf1 * nf2
    return c1, c2


def gain_norm(gain: np.ndarray, space: WeightedSpace) -> float:
    """Operator norm of a gain matrix R^{d_y} -> R^n_M."""
    return mixed_norm(gain, None, space)
