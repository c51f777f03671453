"""Analytic spectral reference solutions and the mean/covariance error metrics.

For constant coefficients the elliptic operator on the interval (Dirichlet)
and on the unit-circumference circle has closed-form eigenpairs, so prior,
heat semigroup, local-average observations and the exact Gaussian posterior
can all be written in mode coordinates. Discretized posteriors are compared
against these references: the mean error in L^2 through closed-form
cross-Gram integrals, the covariance error as an operator norm on the span
of the reference modes together with the discretization basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import TruncationError
from .gaussian import GaussianMeasure
from .space import BasisEvaluator

_EIG_RATIO_LIMIT = 1e-3


class SpectralReference:
    """Closed-form eigenstructure of theta*(-Laplace) + b with integer alpha.

    interval: modes sqrt(2) sin(k pi x), frequencies omega_k = k pi,
    k = 1..n_modes. circle: the constant mode plus cos/sin pairs
    sqrt(2) cos(2 pi k s), sqrt(2) sin(2 pi k s); frequencies 0 and 2 pi k.
    Eigenvalues are theta * omega^2 + b, ascending. The heat semigroup used
    by the forward model is the plain Laplacian one, exp(-omega^2) at t = 1.
    """

    def __init__(self, domain: str, theta: float, b: float, alpha: int, n_modes: int):
        if domain not in ("interval", "circle"):
            raise ValueError(f"unknown domain {domain!r}")
        if theta <= 0 or b < 0:
            raise ValueError("need theta > 0 and b >= 0")
        if domain == "circle" and b <= 0:
            raise ValueError("circle reference needs b > 0 (constant mode eigenvalue)")
        if alpha < 1:
            raise ValueError("alpha must be a positive integer")
        if n_modes < 4:
            raise ValueError("need at least four reference modes")
        self.domain = domain
        self.theta = float(theta)
        self.b = float(b)
        self.alpha = int(alpha)
        self.n_modes = int(n_modes)
        if domain == "interval":
            self.wavenumbers = np.arange(1, n_modes + 1)
            self.mode_labels = [("sin", int(k)) for k in self.wavenumbers]
            self.frequencies = np.pi * self.wavenumbers.astype(float)
        else:
            labels = [("const", 0)]
            k = 1
            while len(labels) < n_modes:
                labels.append(("cos", k))
                if len(labels) < n_modes:
                    labels.append(("sin", k))
                k += 1
            self.mode_labels = labels
            self.wavenumbers = np.array([k for _, k in labels])
            self.frequencies = 2.0 * np.pi * self.wavenumbers.astype(float)
        self.eigenvalues = self.theta * self.frequencies**2 + self.b
        self.prior_cov_eigs = self.eigenvalues ** (-float(alpha))
        self.heat_factors = np.exp(-self.frequencies**2)

    def check_truncation(self):
        ratio = self.prior_cov_eigs[-1] / self.prior_cov_eigs[0]
        if ratio > _EIG_RATIO_LIMIT:
            raise TruncationError(
                f"trailing prior eigenvalue is {ratio:.2e} of the leading one; "
                f"retain more reference modes"
            )

    def evaluate_modes(self, x) -> np.ndarray:
        """Mode values at points x; shape (n_modes, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((self.n_modes, x.size))
        for row, (kind, k) in enumerate(self.mode_labels):
            if self.domain == "interval":
                out[row] = np.sqrt(2.0) * np.sin(k * np.pi * x)
            elif kind == "const":
                out[row] = 1.0
            elif kind == "cos":
                out[row] = np.sqrt(2.0) * np.cos(2 * np.pi * k * x)
            else:
                out[row] = np.sqrt(2.0) * np.sin(2 * np.pi * k * x)
        return out

    def observation_matrix(self, centers, delta: float) -> np.ndarray:
        """Exact local-average integrals of each mode over the delta-balls.

        interval: the window is [c - delta, c + delta] clipped to [0, 1].
        circle: the ball is chordal, so the window is the arc of half-length
        arcsin(min(pi delta, 1))/pi around the center, matching the ambient
        membership rule of the surrogate observation map.
        """
        if delta <= 0:
            raise ValueError("delta must be positive")
        centers = np.asarray(centers, dtype=float)
        out = np.empty((centers.size, self.n_modes))
        if self.domain == "interval":
            lo = np.clip(centers - delta, 0.0, 1.0)
            hi = np.clip(centers + delta, 0.0, 1.0)
            for row, (_, k) in enumerate(self.mode_labels):
                w = k * np.pi
                out[:, row] = np.sqrt(2.0) * (np.cos(w * lo) - np.cos(w * hi)) / w
            return out
        half_arc = np.arcsin(min(np.pi * delta, 1.0)) / np.pi
        lo = centers - half_arc
        hi = centers + half_arc
        for row, (kind, k) in enumerate(self.mode_labels):
            if kind == "const":
                out[:, row] = hi - lo
            elif kind == "cos":
                w = 2 * np.pi * k
                out[:, row] = np.sqrt(2.0) * (np.sin(w * hi) - np.sin(w * lo)) / w
            else:
                w = 2 * np.pi * k
                out[:, row] = np.sqrt(2.0) * (np.cos(w * lo) - np.cos(w * hi)) / w
        return out

    def forward_matrix(self, centers, delta: float) -> np.ndarray:
        """Heat-then-observe forward map in mode coordinates; shape (d_y, n_modes)."""
        return self.observation_matrix(centers, delta) * self.heat_factors[None, :]

    def mode_coefficients(self, spec: str) -> np.ndarray:
        """Mode coefficients of a function given as a config string.

        `zero`, or `+`-joined terms `sin:<k>`, `cos:<k>`, `const:<v>`, each with
        an optional `*<amplitude>`; `sin:k` means sin(k pi x) on the interval
        and sin(2 pi k s) on the circle (amplitude 1), so the stored
        coefficient on the orthonormal mode is amplitude/sqrt(2).
        """
        coeffs = np.zeros(self.n_modes)
        if spec.strip() == "zero":
            return coeffs
        index = {label: i for i, label in enumerate(self.mode_labels)}
        for term in spec.split("+"):
            term = term.strip()
            body, _, amp_str = term.partition("*")
            amp = float(amp_str) if amp_str else 1.0
            kind, _, arg = body.partition(":")
            if kind == "const":
                if self.domain != "circle":
                    raise ValueError("const terms only exist on the circle")
                coeffs[index[("const", 0)]] += float(arg) * amp
                continue
            k = int(arg)
            if (kind, k) not in index:
                raise ValueError(f"mode {term!r} outside the retained reference modes")
            coeffs[index[(kind, k)]] += amp / np.sqrt(2.0)
        return coeffs


@dataclass(frozen=True)
class ModePosterior:
    """Gaussian measure in reference mode coordinates.

    The covariance is diag(cov_diag) - lowrank @ lowrank.T; a pure prior has
    an empty low-rank part.
    """

    reference: SpectralReference
    mean: np.ndarray
    cov_diag: np.ndarray
    lowrank: np.ndarray = field(repr=False)

    def cov_apply(self, vec: np.ndarray) -> np.ndarray:
        out = self.cov_diag[:, None] * vec if vec.ndim == 2 else self.cov_diag * vec
        return out - self.lowrank @ (self.lowrank.T @ vec)

    def cov_dense(self) -> np.ndarray:
        return np.diag(self.cov_diag) - self.lowrank @ self.lowrank.T


def mode_prior(ref: SpectralReference, mean_spec: str = "zero") -> ModePosterior:
    """The prior itself in mode coordinates (no observation update)."""
    ref.check_truncation()
    return ModePosterior(
        reference=ref,
        mean=ref.mode_coefficients(mean_spec),
        cov_diag=ref.prior_cov_eigs.copy(),
        lowrank=np.zeros((ref.n_modes, 0)),
    )


def spectral_posterior(ref: SpectralReference, centers, delta: float,
                       gamma: np.ndarray, y: np.ndarray,
                       mean_spec: str = "zero") -> ModePosterior:
    """Exact posterior for heat-then-local-average data in mode coordinates."""
    ref.check_truncation()
    forward = ref.forward_matrix(centers, delta)
    prior_mean = ref.mode_coefficients(mean_spec)
    cov_ft = ref.prior_cov_eigs[:, None] * forward.T  # n_modes x d_y
    innovation = forward @ cov_ft + np.asarray(gamma, dtype=float)
    chol = scipy.linalg.cholesky((innovation + innovation.T) / 2.0, lower=True)
    mean = prior_mean + cov_ft @ scipy.linalg.cho_solve(
        (chol, True), np.asarray(y, dtype=float) - forward @ prior_mean
    )
    lowrank = scipy.linalg.solve_triangular(chol, cov_ft.T, lower=True).T
    return ModePosterior(reference=ref, mean=mean,
                         cov_diag=ref.prior_cov_eigs.copy(), lowrank=lowrank)


def _residual_cholesky(schur: np.ndarray) -> np.ndarray:
    """Upper Cholesky factor of the residual Gram M - X^T X, clamped if needed."""
    try:
        return scipy.linalg.cholesky((schur + schur.T) / 2.0, lower=False)
    except scipy.linalg.LinAlgError:
        # Nearly dependent union basis: fall back to an eigenvalue-clamped
        # triangular factor with R^T R = schur.
        eigvals, eigvecs = scipy.linalg.eigh((schur + schur.T) / 2.0)
        floor = 1e-15 * max(eigvals[-1], 1e-300)
        root = (eigvecs * np.sqrt(np.maximum(eigvals, floor))).T
        return scipy.linalg.qr(root, mode="r")[0]


class _UnionSpanOperator:
    """The difference operator (reference cov) - P* C_disc P on the union span.

    Coordinates are (a, b): a over the reference modes, b over the
    discretization basis. The union Gram is G = [[I, X], [X^T, M]] = R^T R
    with R = [[I, X], [0, chol(M - X^T X)]]; the L^2 operator norm of the
    difference is the Euclidean 2-norm of R T R^{-1}.
    """

    def __init__(self, ref_post: ModePosterior, discrete: GaussianMeasure,
                 cross_gram: np.ndarray):
        self.post = ref_post
        self.n_modes = ref_post.reference.n_modes
        self.space = discrete.space
        self.cov_disc = discrete.cov.matrix
        self.x = cross_gram
        schur = self.space.mass - cross_gram.T @ cross_gram
        self.r_schur = _residual_cholesky(schur)
        self.dim = self.n_modes + self.space.n

    def _t_apply(self, a, b):
        modal = a + self.x @ b
        p = self.post.cov_apply(modal)
        t = self.space.solve_mass(self.x.T @ a) + b
        q = -self.cov_disc @ t
        return p, q

    def _t_transpose_apply(self, w1, w2):
        p = self.post.cov_apply(w1) - self.x @ self.space.solve_mass(self.cov_disc.T @ w2)
        q = self.x.T @ self.post.cov_apply(w1) - self.cov_disc.T @ w2
        return p, q

    def _split(self, z):
        return z[: self.n_modes], z[self.n_modes:]

    def _r_inv(self, w):
        w1, w2 = self._split(w)
        b = scipy.linalg.solve_triangular(self.r_schur, w2, lower=False)
        return w1 - self.x @ b, b

    def _r_apply(self, a, b):
        return a + self.x @ b, self.r_schur @ b

    def _rt_apply(self, z1, z2):
        return z1, self.x.T @ z1 + self.r_schur.T @ z2

    def _rt_inv(self, w):
        z1, z2 = self._split(w)
        return z1, scipy.linalg.solve_triangular(self.r_schur.T, z2 - self.x.T @ z1, lower=True)

    def matvec_symmetrized(self, w):
        # (L + L^T)/2 with L = R T R^{-1}; symmetric up to rounding because the
        # difference operator is self-adjoint in L^2.
        a, b = self._r_inv(w)
        forward = np.concatenate(self._r_apply(*self._t_apply(a, b)))
        z1, z2 = self._rt_apply(*self._split(w))
        back = np.concatenate(self._rt_inv(np.concatenate(self._t_transpose_apply(z1, z2))))
        return 0.5 * (forward + back)

    def dense_symmetrized(self) -> np.ndarray:
        out = np.empty((self.dim, self.dim))
        basis = np.eye(self.dim)
        for j in range(self.dim):
            out[:, j] = self.matvec_symmetrized(basis[j])
        return out

    def norm(self) -> float:
        if self.dim <= 400:
            return float(np.linalg.norm(scipy.linalg.eigvalsh(self.dense_symmetrized()), np.inf))
        op = scipy.sparse.linalg.LinearOperator(
            (self.dim, self.dim), matvec=self.matvec_symmetrized, dtype=float
        )
        v0 = np.ones(self.dim) / np.sqrt(self.dim)
        try:
            vals = scipy.sparse.linalg.eigsh(
                op, k=1, which="LM", v0=v0, tol=1e-10, maxiter=10000,
                return_eigenvectors=False,
            )
            return float(abs(vals[0]))
        except scipy.sparse.linalg.ArpackError:
            return float(np.linalg.norm(scipy.linalg.eigvalsh(self.dense_symmetrized()), np.inf))


def error_metrics(discrete: GaussianMeasure, basis: BasisEvaluator,
                  ref_post: ModePosterior) -> dict:
    """Mean and covariance errors of a discretized posterior against the reference.

    eps_m is the L^2 norm of (reference mean) - (extension of the discrete
    mean), expanded through the cross-Gram X: |m|^2 - 2 m^T X u + u^T M u.
    eps_C is the L^2 operator norm of (reference covariance) - P* C_disc P,
    estimated on the span of the reference modes plus the discretization
    basis.
    """
    ref_post.reference.check_truncation()
    x = basis.cross_gram(ref_post.reference)
    m_ref = ref_post.mean
    u = discrete.mean.coeffs
    sq = float(m_ref @ m_ref - 2.0 * m_ref @ (x @ u) + u @ (discrete.space.mass @ u))
    eps_m = float(np.sqrt(max(sq, 0.0)))
    eps_c = _UnionSpanOperator(ref_post, discrete, x).norm()
    return {"eps_m": eps_m, "eps_C": eps_c}


class ModeBasis(BasisEvaluator):
    """Identity basis: the discretization space is the first n reference modes.

    Used by the spectral refinement studies, where coarse spaces are exact
    truncations of the reference itself.
    """

    def __init__(self, reference: SpectralReference, n: int):
        if n > reference.n_modes:
            raise ValueError("discrete mode count exceeds the reference")
        self.reference = reference
        self.n = n

    def evaluate(self, coeffs: np.ndarray, x) -> np.ndarray:
        modes = self.reference.evaluate_modes(x)[: self.n]
        return np.asarray(coeffs, dtype=float) @ modes

    def cross_gram(self, reference) -> np.ndarray:
        if reference is not self.reference:
            raise ValueError("mode basis is tied to its own reference")
        out = np.zeros((reference.n_modes, self.n))
        out[: self.n, : self.n] = np.eye(self.n)
        return out
