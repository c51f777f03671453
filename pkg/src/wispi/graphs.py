"""Graph-Laplacian discretization on point clouds of the unit-circumference circle.

Points carry the empirical measure with mass matrix M = I/n. An epsilon-graph
with the kernel normalization 2(d+2)/(n nu_d h^{d+2}) approximates the
(possibly nonstationary) elliptic operator; the Matern prior and the heat
forward map act through its spectrum. Observations are surrogate ball
averages over the cloud.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .errors import (
    CoefficientError,
    ConditioningError,
    DimensionError,
    DisconnectedGraphWarning,
    EmptyBallWarning,
)
from .space import WeightedOperator, WeightedSpace, WeightedVector

CIRCLE_RADIUS = 1.0 / (2.0 * np.pi)


def arc_to_ambient(s: np.ndarray) -> np.ndarray:
    """Embed arc coordinates s in [0, 1) into R^2 on the circle of circumference 1."""
    s = np.asarray(s, dtype=float)
    angle = 2.0 * np.pi * s
    return CIRCLE_RADIUS * np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def chordal_distance(s_a, s_b) -> np.ndarray:
    """Ambient (chordal) distance between arc coordinates; equals sin(pi t)/pi for arc gap t."""
    t = np.abs(np.asarray(s_a, dtype=float) - np.asarray(s_b, dtype=float)) % 1.0
    t = np.minimum(t, 1.0 - t)
    return np.sin(np.pi * t) / np.pi


class PointCloud:
    """n points on the circle, either equispaced or sampled uniformly at random.

    Cells of mass exactly 1/n are attached to the points (centered arcs for
    equispaced clouds, the sorted equal-length-arc assignment otherwise); they
    realize the piecewise-constant extension basis.
    """

    def __init__(self, n: int, mode: str = "equispaced", seed: int = 0):
        if n < 3:
            raise ValueError("need at least three points")
        if mode not in ("equispaced", "uniform-random"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        self.n = n
        self.mode = mode
        self.seed = seed
        if mode == "equispaced":
            self.positions = np.arange(n) / n
        else:
            rng = np.random.default_rng(seed)
            self.positions = np.sort(rng.uniform(0.0, 1.0, size=n))
        self.ambient = arc_to_ambient(self.positions)
        order = np.argsort(self.positions, kind="stable")
        # Offset of the equal-length cell grid: circular mean of the gaps
        # between sorted points and nominal cell centers.
        gaps = self.positions[order] - (np.arange(n) + 0.5) / n
        mean_angle = np.angle(np.exp(2j * np.pi * gaps).mean()) / (2.0 * np.pi)
        self.cell_offset = mean_angle % 1.0
        self.cell_order = order  # original index of the point owning arc j
        starts = np.empty(n)
        starts[order] = (self.cell_offset + np.arange(n) / n) % 1.0
        self.cell_starts = starts  # start of the cell owned by point i

    def space(self) -> WeightedSpace:
        return WeightedSpace(np.eye(self.n) / self.n)

    def cell_index(self, s) -> np.ndarray:
        """Index of the point whose cell contains arc coordinate s."""
        s = np.asarray(s, dtype=float)
        j = np.floor(((s - self.cell_offset) % 1.0) * self.n).astype(int) % self.n
        return self.cell_order[j]


@dataclass(frozen=True)
class GraphOperator:
    """Symmetric nonnegative weights and the induced Laplacian D - W."""

    weights: np.ndarray = field(repr=False)
    laplacian: np.ndarray = field(repr=False)
    h_n: float
    connected: bool
    positions: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class GraphSpectrum:
    """Eigenpairs of a graph operator, M-orthonormal: (1/n) psi^T psi = I."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)


def connectivity_scale(n, d: int = 1, c: float = 1.0) -> float:
    """Graph radius c * sqrt((log n)^{c_d} / n^{1/d}), c_d = 1/d for d != 2, 3/4 for d = 2."""
    if n < 2:
        raise ValueError("connectivity scale needs n >= 2")
    c_d = 0.75 if d == 2 else 1.0 / d
    return float(c * np.sqrt(np.log(n) ** c_d / n ** (1.0 / d)))


def build_graph(cloud: PointCloud, h_n: float,
                theta: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> GraphOperator:
    """Epsilon-graph with weights 2(d+2)/(n nu_d h^{d+2}) on chordal-distance balls.

    For d = 1 the unit-ball volume is nu_1 = 2. A coefficient function theta
    (of the arc coordinate) rescales weights by sqrt(theta_i theta_j). A
    disconnected graph is reported with a warning, not an error.
    """
    if h_n <= 0:
        raise ValueError("h_n must be positive")
    n = cloud.n
    dist = chordal_distance(cloud.positions[:, None], cloud.positions[None, :])
    adjacency = dist < h_n
    np.fill_diagonal(adjacency, False)
    scale = 2.0 * 3.0 / (n * 2.0 * h_n**3)  # 2(d+2)/(n nu_d h^{d+2}), d = 1
    weights = scale * adjacency.astype(float)
    if theta is not None:
        theta_vals = np.asarray(theta(cloud.positions), dtype=float)
        if np.any(theta_vals <= 0):
            raise CoefficientError("theta must be positive at all cloud points")
        weights = weights * np.sqrt(theta_vals[:, None] * theta_vals[None, :])
    n_comp, _ = connected_components(adjacency, directed=False)
    connected = bool(n_comp == 1)
    if not connected:
        warnings.warn(
            f"graph with h_n={h_n:.4g} has {n_comp} connected components",
            DisconnectedGraphWarning,
            stacklevel=2,
        )
    laplacian = np.diag(weights.sum(axis=1)) - weights
    return GraphOperator(weights=weights, laplacian=laplacian, h_n=h_n,
                         connected=connected, positions=cloud.positions)


def graph_elliptic_operator(graph: GraphOperator,
                            b: Callable[[np.ndarray], np.ndarray]) -> WeightedOperator:
    """Elliptic operator A = (D - W) + diag(b); SPD and self-adjoint on R^n_M."""
    b_vals = np.asarray(b(graph.positions), dtype=float)
    if np.any(b_vals <= 0):
        raise CoefficientError("b must be positive at all cloud points")
    n = graph.laplacian.shape[0]
    space = WeightedSpace(np.eye(n) / n)
    return space.operator(graph.laplacian + np.diag(b_vals))


def graph_spectrum(matrix: np.ndarray) -> GraphSpectrum:
    """Eigendecomposition of a symmetric graph operator, M-orthonormalized.

    Tiny negative eigenvalues from rounding are clamped to zero so that PSD
    operators stay PSD spectrally.
    """
    n = matrix.shape[0]
    eigvals, eigvecs = scipy.linalg.eigh(matrix)
    floor = -1e-10 * max(1.0, abs(eigvals[-1]))
    if eigvals[0] < floor:
        raise ValueError(f"operator is indefinite: smallest eigenvalue {eigvals[0]:.3e}")
    eigvals = np.maximum(eigvals, 0.0)
    return GraphSpectrum(eigenvalues=eigvals, eigenvectors=np.sqrt(n) * eigvecs)


def graph_prior_covariance(elliptic: WeightedOperator, alpha: int,
                           spectral_cutoff: Optional[int] = None) -> WeightedOperator:
    """Matern-type prior C_0 = A^{-alpha} through the spectral decomposition.

    With M = I/n the M-orthonormal spectral sum collapses to the Euclidean one,
    so C_0 is the plain symmetric matrix power. `spectral_cutoff` keeps only
    the lowest-k part of the spectrum (the rest of C_0 is set to zero).
    """
    spectrum = graph_spectrum(elliptic.matrix)
    eigvals = spectrum.eigenvalues
    if eigvals[0] < 1e-12:
        raise ConditioningError(
            f"elliptic operator nearly singular: smallest eigenvalue {eigvals[0]:.3e}"
        )
    n = elliptic.space.n
    keep = slice(None) if spectral_cutoff is None else slice(0, spectral_cutoff)
    vecs = spectrum.eigenvectors[:, keep] / np.sqrt(n)  # back to Euclidean orthonormal
    cov = (vecs * eigvals[keep] ** (-float(alpha))) @ vecs.T
    return elliptic.space.operator(cov)


def graph_heat(spectrum: GraphSpectrum, u: WeightedVector) -> WeightedVector:
    """Heat solution map at t = 1: sum_i exp(-lambda_i) <u, psi_i>_M psi_i.

    The spectrum must come from the unweighted Laplacian D - W; the map is an
    M-norm contraction and preserves the constant component exactly.
    """
    n = u.space.n
    modal = spectrum.eigenvectors.T @ (u.space.mass @ u.coeffs)
    out = spectrum.eigenvectors @ (np.exp(-spectrum.eigenvalues) * modal)
    return u.space.vector(out)


def graph_heat_matrix(spectrum: GraphSpectrum, n: int) -> np.ndarray:
    """Dense heat solution map; equals V exp(-Lambda) V^T for M = I/n."""
    vecs = spectrum.eigenvectors / np.sqrt(n)
    return (vecs * np.exp(-spectrum.eigenvalues)) @ vecs.T


def surrogate_observe(cloud: PointCloud, coeffs: np.ndarray, centers, delta: float) -> np.ndarray:
    """Ball averages (1/n) sum over cloud points within chordal distance delta.

    `centers` are arc coordinates (shape (d_y,)) or ambient points
    (shape (d_y, 2)). Empty balls give 0 and a warning.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (cloud.n,):
        raise DimensionError(f"coefficients have shape {coeffs.shape}, cloud has {cloud.n} points")
    return surrogate_observation_matrix(cloud, centers, delta) @ coeffs


def surrogate_observation_matrix(cloud: PointCloud, centers, delta: float) -> np.ndarray:
    """Rows are (1/n) indicators of the chordal delta-ball around each center."""
    centers = np.asarray(centers, dtype=float)
    if centers.ndim == 2:
        if centers.shape[1] != 2:
            raise DimensionError("ambient centers must have shape (d_y, 2)")
        centers = (np.arctan2(centers[:, 1], centers[:, 0]) / (2.0 * np.pi)) % 1.0
    member = chordal_distance(centers[:, None], cloud.positions[None, :]) < delta
    empty = ~member.any(axis=1)
    if np.any(empty):
        warnings.warn(
            f"{int(empty.sum())} observation ball(s) contain no cloud points",
            EmptyBallWarning,
            stacklevel=2,
        )
    return member.astype(float) / cloud.n


class CellBasis:
    """Piecewise-constant extension over the equal-mass cells of a point cloud."""

    def __init__(self, cloud: PointCloud):
        self.cloud = cloud

    def evaluate(self, coeffs: np.ndarray, x) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        return coeffs[self.cloud.cell_index(x)]

    def cross_gram(self, reference) -> np.ndarray:
        """X_{ki} = integral of circle mode psi_k over the cell arc of point i."""
        if reference.domain != "circle":
            raise ValueError("cell basis pairs with the circle reference")
        a = self.cloud.cell_starts
        b = a + 1.0 / self.cloud.n
        rows = np.empty((reference.n_modes, self.cloud.n))
        for row, (kind, k) in enumerate(reference.mode_labels):
            if kind == "const":
                rows[row] = b - a
            elif kind == "cos":
                rows[row] = np.sqrt(2.0) * (np.sin(2 * np.pi * k * b) - np.sin(2 * np.pi * k * a)) / (
                    2 * np.pi * k
                )
            else:
                rows[row] = np.sqrt(2.0) * (np.cos(2 * np.pi * k * a) - np.cos(2 * np.pi * k * b)) / (
                    2 * np.pi * k
                )
        return rows
