"""Batch experiment runner behind the `wispi` command line.

Each experiment builds its discretizations, sweeps a refinement or ensemble
parameter, fits log-log convergence rates, and writes three artifacts into
the output directory: `<experiment>.csv` (spec'd column schema, byte-stable
across reruns with the same seeds), a gnuplot-compatible `<experiment>.dat`
copy, and `<experiment>_summary.json` with fitted slopes and pass/fail
checks against the acceptance windows stored in the config defaults.
"""

from __future__ import annotations

import csv
import datetime
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, graphs, kernels
from .burgers import SpectralGalerkinBurgers, burgers_forward, parse_mode_string, real_to_complex
from .ensemble import (
    effective_dimension,
    eki_update,
    factor_prior,
    sample_prior,
    weighted_sample_stats,
)
from .errors import ConfigError, FitError, MaxIterationsError
from .gaussian import GaussianMeasure, ObservationModel, posterior_euclidean, posterior_weighted
from .map_estimation import (
    OMFunctional,
    RefinementProblem,
    map_refinement_study,
    om_minimize,
)
from .reference import SpectralReference, error_metrics, mode_prior, spectral_posterior
from .space import WeightedSpace, operator_norm_m

EXPERIMENTS = (
    "fem-prior", "fem-forward", "fem-posterior", "graph-prior", "graph-posterior",
    "eki", "effective-dim", "map-linear", "map-burgers",
)

_COLUMNS = {
    "fem-prior": ["h", "n", "eps_C"],
    "fem-forward": ["sweep", "h", "n", "dt", "err"],
    "fem-posterior": ["h", "n", "dt", "eps_m", "eps_C"],
    "graph-prior": ["n", "h_n", "connected", "eps_C"],
    "graph-posterior": ["n", "h_n", "connected", "eps_m", "eps_C"],
    "eki": ["n", "J", "seed", "err_mean", "err_cov", "eff_dim"],
    "effective-dim": ["h", "n", "r_M", "r_analytic", "eig_overestimate"],
    "map-linear": ["h", "n", "alpha", "seed", "err_map"],
    "map-burgers": ["n", "restarts", "I_min", "succ_diff"],
}

_DEFAULTS = {
    "fem-prior": {
        "h_list": [1 / 16, 1 / 32, 1 / 64, 1 / 128],
        "alpha": 2, "theta": "const:1", "b": "const:1", "n_ref": 2048,
        "slope_window": [1.7, 2.3], "r2_min": 0.98,
    },
    "fem-forward": {
        "h_list": [1 / 16, 1 / 32, 1 / 64, 1 / 128], "dt_fixed": 1 / 512,
        "dt_list": [1 / 8, 1 / 16, 1 / 32, 1 / 64], "h_fixed": 1 / 256,
        "centers": [0.2, 0.4, 0.6, 0.8], "delta": 0.05, "u_true": "sin:1",
        "n_ref": 2048, "slope_window": [1.7, 2.3],
    },
    "fem-posterior": {
        "h_list": [1 / 16, 1 / 32, 1 / 64, 1 / 128], "dt": 1 / 512,
        "centers": [0.2, 0.4, 0.6, 0.8], "delta": 0.05, "gamma_scale": 0.01,
        "alpha": 2, "theta": "const:1", "b": "const:1",
        "m0": "sin:1", "u_true": "sin:1*1.0+sin:2*0.5", "noise_seed": 3,
        "n_ref": 2048, "slope_window": [1.6, 2.4],
        "equiv_mean_rtol": 1e-10, "equiv_cov_rtol": 1e-9,
    },
    "graph-prior": {
        "n_list": [200, 400, 800, 1600], "alpha": 2, "theta": "const:1", "b": "const:1",
        "mode": "equispaced", "seed": 0, "connectivity_constant": 1.25,
        "spectral_cutoff": None, "ref_multiplier": 4,
        "decay_ratio_max": 0.6, "eig_check_k": 5,
    },
    "graph-posterior": {
        "n_list": [200, 400, 800], "alpha": 2, "theta": "const:1", "b": "const:1",
        "mode": "equispaced", "seed": 0, "connectivity_constant": 1.25,
        "spectral_cutoff": None, "ref_multiplier": 4,
        "centers": [0.1, 0.35, 0.6, 0.85], "delta": 0.05, "gamma_scale": 0.01,
        "m0": "zero", "u_true": "cos:1*1.0+sin:2*0.5", "noise_seed": 5,
        "decay_ratio_max": 1.0,
    },
    "eki": {
        "h": 1 / 64, "dt": 1 / 256, "alpha": 2, "theta": "const:1", "b": "const:1",
        "centers": [0.2, 0.4, 0.6, 0.8], "delta": 0.05, "gamma_scale": 0.01,
        "m0": "sin:1", "u_true": "sin:1*1.0+sin:2*0.5", "noise_seed": 3,
        "J_list": [25, 100, 400, 1600], "n_seeds": 20, "n_ref": 1024,
        "slope_window": [-0.65, -0.35],
    },
    "effective-dim": {
        "h_list": [1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256],
        "alpha": 2, "theta": "const:1", "b": "const:1",
        "bound_factor": 1.1, "analytic_terms": 100000,
    },
    "map-linear": {
        "configs": [[1 / 16, 2, 21], [1 / 32, 2, 22], [1 / 64, 2, 23],
                    [1 / 16, 1, 24], [1 / 16, 3, 26]],
        "dt": 1 / 128, "centers": [0.2, 0.4, 0.6, 0.8], "delta": 0.05,
        "gamma_scale": 0.01, "m0": "sin:1", "n_ref": 512,
        "tol": 1e-8, "err_max": 1e-6,
    },
    "map-burgers": {
        "nu": 0.05, "alpha": 2, "t_obs": 0.002,
        "obs_points": [0.125, 0.375, 0.625, 0.875], "gamma_scale": 1e-4,
        "n_list": [8, 16, 32, 64], "seed": 7, "data_modes": 128,
        "forcing": "zero", "tol": 1e-9, "value_slack": 1e-8,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment name, parameters, and output directory."""

    experiment: str
    params: dict
    output_dir: Path

    @classmethod
    def from_dict(cls, raw: dict, output_dir=None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        name = raw.get("experiment")
        if name not in EXPERIMENTS:
            raise ConfigError(
                f"experiment must be one of {', '.join(EXPERIMENTS)}; got {name!r}"
            )
        params = dict(_DEFAULTS[name])
        unknown = set(raw) - set(params) - {"experiment", "output_dir"}
        if unknown:
            raise ConfigError(f"unknown fields for {name}: {sorted(unknown)}")
        params.update({k: v for k, v in raw.items() if k not in ("experiment", "output_dir")})
        _validate(name, params)
        out = Path(output_dir or raw.get("output_dir") or "wispi-out")
        return cls(experiment=name, params=params, output_dir=out)

    @classmethod
    def from_file(cls, path, output_dir=None) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, output_dir=output_dir)


def _validate(name: str, p: dict):
    def positive_list(key):
        values = p.get(key)
        if not isinstance(values, (list, tuple)) or len(values) == 0:
            raise ConfigError(f"{name}: {key} must be a non-empty list")
        if any(not np.isfinite(v) or v <= 0 for v in values):
            raise ConfigError(f"{name}: {key} entries must be positive and finite")

    for key in ("h_list", "n_list", "J_list", "dt_list"):
        if key in p:
            positive_list(key)
    for key in ("delta", "gamma_scale", "dt", "dt_fixed", "h_fixed", "h", "nu", "t_obs",
                "connectivity_constant", "tol"):
        if key in p and (not np.isfinite(p[key]) or p[key] <= 0):
            raise ConfigError(f"{name}: {key} must be positive")
    if "alpha" in p and (int(p["alpha"]) != p["alpha"] or p["alpha"] < 1):
        raise ConfigError(f"{name}: alpha must be a positive integer")
    if "h_list" in p:
        for h in p["h_list"]:
            if abs(round(1.0 / h) - 1.0 / h) > 1e-9 or round(1.0 / h) < 2:
                raise ConfigError(f"{name}: h={h} is not the reciprocal of an integer >= 2")
    if "mode" in p and p["mode"] not in ("equispaced", "uniform-random"):
        raise ConfigError(f"{name}: mode must be equispaced or uniform-random")
    if name == "map-linear":
        configs = p["configs"]
        if not configs:
            raise ConfigError("map-linear: configs must be non-empty")
        for item in configs:
            if len(item) != 3 or item[0] <= 0 or int(item[1]) < 1:
                raise ConfigError("map-linear: each config is [h, alpha, seed]")


@dataclass
class ResultBundle:
    """Rows plus JSON summary of one experiment run."""

    experiment: str
    columns: list
    rows: list
    summary: dict
    passed: bool
    csv_path: Path = None
    json_path: Path = None


def fit_rate(xs, ys) -> dict:
    """Least-squares slope of log(y) against log(x); requires 3+ positive points."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3 or xs.size != ys.size:
        raise FitError("rate fit needs at least three (x, y) pairs")
    if np.any(xs <= 0) or np.any(ys <= 0) or not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise FitError("rate fit needs positive finite values")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = ly - (slope * lx + intercept)
    total = ly - ly.mean()
    r_squared = 1.0 - float(residual @ residual) / float(total @ total) if total.any() else 1.0
    return {"xs": xs.tolist(), "ys": ys.tolist(), "slope": float(slope),
            "intercept": float(intercept), "r_squared": float(r_squared)}


def _pmap(fn, items, threads: int, fallback=None, errors=None):
    """Map preserving input order; thread pool for independent sweep points.

    With `fallback`, a failing point contributes fallback(item) (typically a
    NaN row), its message is appended to `errors`, and the sweep continues.
    """
    def guarded(item):
        if fallback is None:
            return fn(item)
        try:
            return fn(item)
        except Exception as exc:  # per-point failure: record and continue
            errors.append(f"point {item!r}: {type(exc).__name__}: {exc}")
            return fallback(item)

    if threads <= 1 or len(items) <= 1:
        return [guarded(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, items))


def _try_fit(xs, ys, errors):
    try:
        return fit_rate(xs, ys)
    except FitError as exc:
        errors.append(f"rate fit failed: {exc}")
        return None


def _in_window(fit, window) -> bool:
    return fit is not None and window[0] <= fit["slope"] <= window[1]


def _mesh_for(h: float) -> fem.Mesh1D:
    return fem.Mesh1D(round(1.0 / h) - 1)


def _coefficients(p: dict) -> fem.Coefficients1D:
    return fem.Coefficients1D(
        theta=fem.parse_coefficient(p["theta"]),
        b=fem.parse_coefficient(p["b"]),
        alpha=int(p["alpha"]),
    )


def _constant_coefficients(p: dict):
    """(theta, b) as floats when both specs are constant, else None."""
    vals = []
    for key in ("theta", "b"):
        kind, _, rest = p[key].partition(":")
        if kind != "const":
            return None
        vals.append(float(rest))
    return tuple(vals)


def _interval_reference(p: dict, n_ref: int) -> SpectralReference:
    constants = _constant_coefficients(p)
    if constants is None:
        raise ConfigError(
            "analytic interval reference needs constant coefficients; "
            "variable-coefficient sweeps use the fine-grid surrogate"
        )
    return SpectralReference("interval", constants[0], constants[1], int(p["alpha"]), n_ref)


def _embedding_matrix(coarse: fem.Mesh1D, fine: fem.Mesh1D) -> np.ndarray:
    """Nodal interpolation of coarse hats on a nested finer mesh (exact embedding)."""
    ratio = (fine.n_interior + 1) / (coarse.n_interior + 1)
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("fine-grid surrogate needs nested meshes (h ratios integer)")
    basis = fem.HatBasis(coarse)
    columns = [basis.evaluate(np.eye(coarse.n_interior)[j], fine.nodes)
               for j in range(coarse.n_interior)]
    return np.column_stack(columns)


def _surrogate_metrics(mesh_c, measure_c, mesh_f, measure_f) -> dict:
    """eps_m / eps_C of a coarse posterior against a fine-grid surrogate reference.

    Both functions live exactly in the fine hat space, so the L^2 distance is
    the fine M-norm of the embedded difference, and the covariance error is a
    weighted operator norm on the fine space.
    """
    embed = _embedding_matrix(mesh_c, mesh_f)
    space_f = measure_f.space
    space_c = measure_c.space
    diff_mean = measure_f.mean.coeffs - embed @ measure_c.mean.coeffs
    eps_m = space_f.norm(diff_mean)
    sandwich = embed @ space_c.solve_mass(measure_c.cov.matrix.T).T @ embed.T @ space_f.mass
    eps_c = operator_norm_m(space_f.operator(measure_f.cov.matrix - sandwich))
    return {"eps_m": float(eps_m), "eps_C": float(eps_c)}


def _fem_data(p: dict, ref: SpectralReference):
    """Observation data y generated through the reference forward plus noise."""
    rng = np.random.default_rng(int(p["noise_seed"]))
    clean = ref.forward_matrix(p["centers"], p["delta"]) @ ref.mode_coefficients(p["u_true"])
    return clean + np.sqrt(p["gamma_scale"]) * rng.standard_normal(len(p["centers"]))


def _fem_prior_measure(mesh, p, ref):
    space = fem.assemble_mass(mesh)
    cov = fem.fem_prior_covariance(mesh, _coefficients(p))
    x_gram = fem.HatBasis(mesh).cross_gram(ref)
    m0 = space.solve_mass(x_gram.T @ ref.mode_coefficients(p.get("m0", "zero")))
    return GaussianMeasure(space.vector(m0), cov, validate=False), space


# --- experiment implementations -------------------------------------------------

def _run_fem_prior(p: dict, threads: int):
    errors: list[str] = []
    analytic = _constant_coefficients(p) is not None
    if analytic:
        ref = _interval_reference(p, int(p["n_ref"]))
        prior_modes = mode_prior(ref, "zero")

        def point(h):
            mesh = _mesh_for(h)
            measure, _ = _fem_prior_measure(mesh, {**p, "m0": "zero"}, ref)
            met = error_metrics(measure, fem.HatBasis(mesh), prior_modes)
            return [h, mesh.n_interior, met["eps_C"]]
    else:
        mesh_f = _mesh_for(min(p["h_list"]) / 8.0)
        cov_f = fem.fem_prior_covariance(mesh_f, _coefficients(p))
        fine = GaussianMeasure(cov_f.space.vector(np.zeros(mesh_f.n_interior)), cov_f,
                               validate=False)

        def point(h):
            mesh = _mesh_for(h)
            cov = fem.fem_prior_covariance(mesh, _coefficients(p))
            measure = GaussianMeasure(cov.space.vector(np.zeros(mesh.n_interior)), cov,
                                      validate=False)
            met = _surrogate_metrics(mesh, measure, mesh_f, fine)
            return [h, mesh.n_interior, met["eps_C"]]

    rows = _pmap(point, list(p["h_list"]), threads,
                 fallback=lambda h: [h, round(1 / h) - 1, float("nan")], errors=errors)
    fit = _try_fit([r[0] for r in rows], [r[2] for r in rows], errors)
    checks = {
        "slope_in_window": _in_window(fit, p["slope_window"]),
        "r_squared_min": bool(fit is not None and fit["r_squared"] >= p["r2_min"]),
    }
    extras = {"fit_eps_C_vs_h": fit, "errors": errors,
              "reference": "analytic-spectral" if analytic else "fine-grid-surrogate"}
    return rows, extras, checks


def _run_fem_forward(p: dict, threads: int):
    ref = _interval_reference({**p, "alpha": 1, "theta": "const:1", "b": "const:1"},
                              int(p["n_ref"]))
    u_modes = ref.mode_coefficients(p["u_true"])
    ref_obs = ref.forward_matrix(p["centers"], p["delta"]) @ u_modes

    errors: list[str] = []

    def forward_error(mesh, dt):
        space = fem.assemble_mass(mesh)
        x_gram = fem.HatBasis(mesh).cross_gram(ref)
        projected = space.solve_mass(x_gram.T @ u_modes)
        forward = fem.fem_forward(mesh, dt, p["centers"], p["delta"])
        return float(np.linalg.norm(ref_obs - forward @ projected))

    rows = _pmap(
        lambda h: ["h", h, _mesh_for(h).n_interior, p["dt_fixed"],
                   forward_error(_mesh_for(h), p["dt_fixed"])],
        list(p["h_list"]), threads,
        fallback=lambda h: ["h", h, round(1 / h) - 1, p["dt_fixed"], float("nan")],
        errors=errors,
    )
    mesh_fixed = _mesh_for(p["h_fixed"])
    rows += _pmap(
        lambda dt: ["dt", p["h_fixed"], mesh_fixed.n_interior, dt,
                    forward_error(mesh_fixed, dt)],
        list(p["dt_list"]), threads,
        fallback=lambda dt: ["dt", p["h_fixed"], mesh_fixed.n_interior, dt, float("nan")],
        errors=errors,
    )
    h_rows = [r for r in rows if r[0] == "h"]
    dt_rows = [r for r in rows if r[0] == "dt"]
    fit_h = _try_fit([r[1] for r in h_rows], [r[4] for r in h_rows], errors)
    fit_dt = _try_fit([r[3] for r in dt_rows], [r[4] for r in dt_rows], errors)
    checks = {
        "h_slope_in_window": _in_window(fit_h, p["slope_window"]),
        "dt_slope_in_window": _in_window(fit_dt, p["slope_window"]),
    }
    return rows, {"fit_err_vs_h": fit_h, "fit_err_vs_dt": fit_dt, "errors": errors}, checks


def _run_fem_posterior(p: dict, threads: int):
    gamma = p["gamma_scale"] * np.eye(len(p["centers"]))
    equiv = {"mean_rel": 0.0, "cov_rel": 0.0}
    analytic = _constant_coefficients(p) is not None

    def coarse_posteriors(mesh, reference, y):
        prior, _ = _fem_prior_measure(mesh, p, reference)
        obs = ObservationModel(fem.fem_forward(mesh, p["dt"], p["centers"], p["delta"]),
                               gamma, y)
        post_w = posterior_weighted(prior, obs)
        post_e = posterior_euclidean(prior, obs)
        mean_rel = float(np.linalg.norm(post_w.mean.coeffs - post_e.mean.coeffs)
                         / np.linalg.norm(post_w.mean.coeffs))
        cov_rel = float(np.linalg.norm(post_e.cov.matrix - post_w.cov.matrix)
                        / np.linalg.norm(post_w.cov.matrix))
        equiv["mean_rel"] = max(equiv["mean_rel"], mean_rel)
        equiv["cov_rel"] = max(equiv["cov_rel"], cov_rel)
        return post_w

    if analytic:
        ref = _interval_reference(p, int(p["n_ref"]))
        y = _fem_data(p, ref)
        ref_post = spectral_posterior(ref, p["centers"], p["delta"], gamma, y, p["m0"])

        def point(h):
            mesh = _mesh_for(h)
            post_w = coarse_posteriors(mesh, ref, y)
            met = error_metrics(post_w, fem.HatBasis(mesh), ref_post)
            return [h, mesh.n_interior, p["dt"], met["eps_m"], met["eps_C"]]
    else:
        # Fine-grid discrete surrogate stands in for the analytic reference;
        # the data are generated through the fine forward map. m0 and u_true
        # are still mode strings of the plain Laplacian family.
        helper_ref = SpectralReference("interval", 1.0, 1.0, int(p["alpha"]), int(p["n_ref"]))
        mesh_f = _mesh_for(min(p["h_list"]) / 8.0)
        prior_f, space_f = _fem_prior_measure(mesh_f, p, helper_ref)
        rng = np.random.default_rng(int(p["noise_seed"]))
        forward_f = fem.fem_forward(mesh_f, p["dt"], p["centers"], p["delta"])
        x_f = fem.HatBasis(mesh_f).cross_gram(helper_ref)
        u_true = space_f.solve_mass(x_f.T @ helper_ref.mode_coefficients(p["u_true"]))
        y = forward_f @ u_true + np.sqrt(p["gamma_scale"]) * rng.standard_normal(
            len(p["centers"]))
        fine_post = posterior_weighted(prior_f, ObservationModel(forward_f, gamma, y))

        def point(h):
            mesh = _mesh_for(h)
            post_w = coarse_posteriors(mesh, helper_ref, y)
            met = _surrogate_metrics(mesh, post_w, mesh_f, fine_post)
            return [h, mesh.n_interior, p["dt"], met["eps_m"], met["eps_C"]]

    errors: list[str] = []
    rows = _pmap(point, list(p["h_list"]), threads,
                 fallback=lambda h: [h, round(1 / h) - 1, p["dt"], float("nan"), float("nan")],
                 errors=errors)
    fit_m = _try_fit([r[0] for r in rows], [r[3] for r in rows], errors)
    fit_c = _try_fit([r[0] for r in rows], [r[4] for r in rows], errors)
    checks = {
        "eps_m_slope_in_window": _in_window(fit_m, p["slope_window"]),
        "eps_C_slope_in_window": _in_window(fit_c, p["slope_window"]),
        "weighted_euclidean_mean_equiv": bool(equiv["mean_rel"] <= p["equiv_mean_rtol"]),
        "weighted_euclidean_cov_equiv": bool(equiv["cov_rel"] <= p["equiv_cov_rtol"]),
    }
    extras = {"fit_eps_m_vs_h": fit_m, "fit_eps_C_vs_h": fit_c, "equivalence": equiv,
              "errors": errors,
              "reference": "analytic-spectral" if analytic else "fine-grid-surrogate"}
    return rows, extras, checks


def _graph_pieces(n: int, p: dict):
    cloud = graphs.PointCloud(n, p["mode"], int(p["seed"]))
    h_n = graphs.connectivity_scale(n, 1, p["connectivity_constant"])
    graph = graphs.build_graph(cloud, h_n, fem.parse_coefficient(p["theta"]))
    elliptic = graphs.graph_elliptic_operator(graph, fem.parse_coefficient(p["b"]))
    cutoff = p.get("spectral_cutoff")
    cov = graphs.graph_prior_covariance(elliptic, int(p["alpha"]),
                                        None if cutoff is None else int(cutoff))
    return cloud, graph, elliptic, cov


def _circle_reference(p: dict, n: int) -> SpectralReference:
    constants = _constant_coefficients(p)
    if constants is None:
        raise ConfigError("circle reference needs constant coefficients")
    n_modes = int(p["ref_multiplier"]) * n + 1
    return SpectralReference("circle", constants[0], constants[1], int(p["alpha"]), n_modes)


def _run_graph_prior(p: dict, threads: int):
    def point(n):
        cloud, graph, _, cov = _graph_pieces(n, p)
        measure = GaussianMeasure(cov.space.vector(np.zeros(n)), cov, validate=False)
        ref = _circle_reference(p, n)
        met = error_metrics(measure, graphs.CellBasis(cloud), mode_prior(ref, "zero"))
        return [n, graph.h_n, int(graph.connected), met["eps_C"]]

    errors: list[str] = []
    rows = _pmap(point, [int(n) for n in p["n_list"]], threads,
                 fallback=lambda n: [n, float("nan"), 0, float("nan")], errors=errors)
    errs = [r[3] for r in rows]
    finite = all(np.isfinite(errs))
    decreasing = finite and all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))
    ratio = errs[-1] / errs[0] if finite else float("nan")
    checks = {
        "eps_C_strictly_decreasing": bool(decreasing),
        "decay_ratio": bool(finite and ratio <= p["decay_ratio_max"]),
    }
    extras = {"final_over_initial": float(ratio),
              "eigenvalue_consistency": _graph_eigenvalue_table(p),
              "errors": errors}
    checks["eigenvalue_errors_monotone"] = bool(
        extras["eigenvalue_consistency"]["all_monotone"]
    )
    return rows, extras, checks


def _graph_eigenvalue_table(p: dict) -> dict:
    """Relative eigenvalue errors of the lowest distinct modes over the n sweep."""
    constants = _constant_coefficients(p)
    theta_c, b_c = constants
    k_max = int(p.get("eig_check_k", 5))
    table = []
    for n in [int(v) for v in p["n_list"]]:
        _, _, elliptic, _ = _graph_pieces(n, p)
        eigvals = graphs.graph_spectrum(elliptic.matrix).eigenvalues
        row = []
        for k in range(1, k_max + 1):
            target = theta_c * (2 * np.pi * k) ** 2 + b_c
            row.append(float(abs(eigvals[2 * k - 1] - target) / target))
        table.append(row)
    arr = np.array(table)
    monotone = [bool((np.diff(arr[:, k]) < 0).all()) for k in range(k_max)]
    return {"n_list": [int(v) for v in p["n_list"]], "rel_errors": arr.tolist(),
            "monotone_per_k": monotone, "all_monotone": all(monotone)}


def _run_graph_posterior(p: dict, threads: int):
    def point(n):
        cloud, graph, _, cov = _graph_pieces(n, p)
        ref = _circle_reference(p, n)
        gamma = p["gamma_scale"] * np.eye(len(p["centers"]))
        rng = np.random.default_rng(int(p["noise_seed"]))
        y = (ref.forward_matrix(p["centers"], p["delta"]) @ ref.mode_coefficients(p["u_true"])
             + np.sqrt(p["gamma_scale"]) * rng.standard_normal(len(p["centers"])))
        ref_post = spectral_posterior(ref, p["centers"], p["delta"], gamma, y, p["m0"])
        # heat propagation through the unweighted Laplacian spectrum
        spectrum = graphs.graph_spectrum(graph.laplacian)
        heat = graphs.graph_heat_matrix(spectrum, n)
        obs_matrix = graphs.surrogate_observation_matrix(cloud, p["centers"], p["delta"])
        basis = graphs.CellBasis(cloud)
        x_gram = basis.cross_gram(ref)
        m0 = cov.space.solve_mass(x_gram.T @ ref.mode_coefficients(p["m0"]))
        prior = GaussianMeasure(cov.space.vector(m0), cov, validate=False)
        obs = ObservationModel(obs_matrix @ heat, gamma, y)
        post = posterior_weighted(prior, obs)
        met = error_metrics(post, basis, ref_post)
        return [n, graph.h_n, int(graph.connected), met["eps_m"], met["eps_C"]]

    errors: list[str] = []
    rows = _pmap(point, [int(n) for n in p["n_list"]], threads,
                 fallback=lambda n: [n, float("nan"), 0, float("nan"), float("nan")],
                 errors=errors)
    errs = [r[4] for r in rows]
    finite = all(np.isfinite(errs))
    ratio = errs[-1] / errs[0] if finite else float("nan")
    checks = {"decay_ratio": bool(finite and ratio <= p["decay_ratio_max"])}
    return rows, {"final_over_initial": float(ratio), "errors": errors}, checks


def _run_eki(p: dict, threads: int):
    ref = _interval_reference(p, int(p["n_ref"]))
    mesh = _mesh_for(p["h"])
    prior, space = _fem_prior_measure(mesh, p, ref)
    gamma = p["gamma_scale"] * np.eye(len(p["centers"]))
    y = _fem_data(p, ref)
    obs = ObservationModel(fem.fem_forward(mesh, p["dt"], p["centers"], p["delta"]),
                           gamma, y)
    exact = posterior_weighted(prior, obs)
    factor = factor_prior(prior.cov)
    eff_dim = effective_dimension(prior.cov)

    points = [(int(j), s) for j in p["J_list"] for s in range(int(p["n_seeds"]))]

    def point(item):
        j_members, seed_idx = item
        draw_seed = 1009 * seed_idx + j_members
        ens = sample_prior(factor, prior.mean.coeffs, j_members, draw_seed)
        updated = eki_update(ens, obs, seed=70001 + draw_seed)
        stats = weighted_sample_stats(updated)
        err_mean = space.norm(stats["mean"].coeffs - exact.mean.coeffs)
        err_cov = operator_norm_m(space.operator(stats["cov"].matrix - exact.cov.matrix))
        return [mesh.n_interior, j_members, seed_idx, err_mean, err_cov, eff_dim]

    errors: list[str] = []
    rows = _pmap(point, points, threads,
                 fallback=lambda item: [mesh.n_interior, item[0], item[1],
                                        float("nan"), float("nan"), eff_dim],
                 errors=errors)
    j_values = sorted({int(j) for j in p["J_list"]})
    mean_by_j = [np.mean([r[3] for r in rows if r[1] == j]) for j in j_values]
    cov_by_j = [np.mean([r[4] for r in rows if r[1] == j]) for j in j_values]
    fit_m = _try_fit(j_values, mean_by_j, errors)
    fit_c = _try_fit(j_values, cov_by_j, errors)
    checks = {
        "mean_slope_in_window": _in_window(fit_m, p["slope_window"]),
        "cov_slope_in_window": _in_window(fit_c, p["slope_window"]),
    }
    extras = {
        "fit_err_mean_vs_J": fit_m, "fit_err_cov_vs_J": fit_c,
        "effective_dimension": eff_dim,
        "sub_threshold_J": [j for j in j_values if j < eff_dim],
        "errors": errors,
    }
    return rows, extras, checks


def _run_effective_dim(p: dict, threads: int):
    theta_c, b_c = _constant_coefficients(p)
    alpha = int(p["alpha"])
    k = np.arange(1, int(p["analytic_terms"]) + 1)
    analytic_eigs = theta_c * (k * np.pi) ** 2 + b_c
    trace_cont = float(np.sum(analytic_eigs ** (-float(alpha))))
    r_cont = trace_cont / analytic_eigs[0] ** (-float(alpha))

    def point(h):
        mesh = _mesh_for(h)
        coeffs = _coefficients(p)
        cov = fem.fem_prior_covariance(mesh, coeffs)
        r_m = effective_dimension(cov)
        discrete = fem.generalized_eigenvalues(mesh, coeffs)
        over = bool(np.all(discrete >= analytic_eigs[: mesh.n_interior] - 1e-9))
        return [h, mesh.n_interior, r_m, r_cont, int(over)]

    errors: list[str] = []
    rows = _pmap(point, list(p["h_list"]), threads,
                 fallback=lambda h: [h, round(1 / h) - 1, float("nan"), r_cont, 0],
                 errors=errors)
    r_values = [r[2] for r in rows]
    finite = all(np.isfinite(r_values))
    checks = {
        "bounded_by_continuum": bool(
            finite and all(r <= p["bound_factor"] * r_cont for r in r_values)
        ),
        "eigenvalues_overestimate": bool(all(r[4] == 1 for r in rows)),
        "monotone_in_n": bool(finite and all(r_values[i + 1] >= r_values[i] - 1e-12
                                             for i in range(len(r_values) - 1))),
    }
    return rows, {"r_continuum": r_cont, "trace_continuum": trace_cont, "errors": errors}, checks


def _run_map_linear(p: dict, threads: int):
    ref = _interval_reference({**p, "alpha": 1, "theta": "const:1", "b": "const:1"},
                              int(p["n_ref"]))
    gamma = p["gamma_scale"] * np.eye(len(p["centers"]))

    def point(item):
        h, alpha, seed = item
        mesh = _mesh_for(h)
        local = {**p, "alpha": int(alpha), "theta": "const:1", "b": "const:1"}
        prior, space = _fem_prior_measure(mesh, local, ref)
        rng = np.random.default_rng(int(seed))
        forward = fem.fem_forward(mesh, p["dt"], p["centers"], p["delta"])
        y = forward @ prior.mean.coeffs + 0.1 * rng.standard_normal(len(p["centers"]))
        obs = ObservationModel(forward, gamma, y)
        exact = posterior_weighted(prior, obs)
        functional = OMFunctional(forward, y, gamma, prior)
        try:
            minimizer = om_minimize(functional, prior.mean.coeffs, tol=p["tol"])
        except MaxIterationsError as exc:
            minimizer = exc.best
        err = space.norm(minimizer - exact.mean.coeffs)
        return [h, mesh.n_interior, int(alpha), int(seed), err]

    errors: list[str] = []
    rows = _pmap(point, [tuple(c) for c in p["configs"]], threads,
                 fallback=lambda c: [c[0], round(1 / c[0]) - 1, int(c[1]), int(c[2]),
                                     float("nan")],
                 errors=errors)
    worst = float(np.max([r[4] for r in rows]))  # NaN-propagating on failed points
    checks = {"matches_posterior_mean": bool(np.isfinite(worst) and worst <= p["err_max"])}
    return rows, {"worst_error": worst, "errors": errors}, checks


def build_linear_spectral_problem(theta: float, b: float, alpha: int, centers, delta: float,
                                  gamma_scale: float, n_ref: int, mean_decay: float,
                                  noise_seed: int = 13):
    """RefinementProblem for the linear heat problem on nested interval mode spaces.

    The prior mean has mode coefficients decaying like k^{-mean_decay}, so the
    successive minimizer differences of the refinement study inherit the
    algebraic tail rate n^{-(mean_decay - 1/2)}.
    """
    ref = SpectralReference("interval", theta, b, alpha, n_ref)
    k = ref.wavenumbers.astype(float)
    m0 = k ** (-float(mean_decay))
    forward_full = ref.forward_matrix(centers, delta)
    rng = np.random.default_rng(noise_seed)
    d_y = len(centers)
    y = forward_full @ m0 + np.sqrt(gamma_scale) * rng.standard_normal(d_y)
    gamma = gamma_scale * np.eye(d_y)

    def build(n: int) -> OMFunctional:
        space = WeightedSpace(np.eye(n))
        prior = GaussianMeasure(space.vector(m0[:n]),
                                space.operator(np.diag(ref.prior_cov_eigs[:n])),
                                validate=False)
        precision = ref.eigenvalues[:n] ** float(alpha)
        return OMFunctional(forward_full[:, :n], y, gamma, prior,
                            prior_precision=lambda v, w=precision: w * v)

    def embed(u, n_from, n_to):
        out = np.zeros(n_to)
        out[:n_from] = u
        return out

    def diff_norm(u_a, n_a, u_b, n_b):
        top = max(n_a, n_b)
        return float(np.linalg.norm(embed(u_a, n_a, top) - embed(u_b, n_b, top)))

    def sample(u, n, x):
        return np.asarray(u) @ ref.evaluate_modes(x)[:n]

    return RefinementProblem(build=build, embed=embed, diff_norm=diff_norm, sample=sample)


def build_burgers_problem(p: dict):
    """RefinementProblem for the Burgers MAP study, plus the data it was built from."""
    alpha = int(p["alpha"])
    obs_points = np.asarray(p["obs_points"], dtype=float)
    d_y = obs_points.size

    def eigenvalues(k_max):
        return (2 * np.pi * np.arange(1, k_max + 1)) ** 2

    def prior_std(k_max):
        lam = eigenvalues(k_max) ** (-alpha / 2.0)
        return np.concatenate([lam, lam])

    def model_for(k_max):
        forcing = real_to_complex(parse_mode_string(p["forcing"], k_max))
        return SpectralGalerkinBurgers(k_max, p["nu"], p["t_obs"], obs_points, forcing)

    rng = np.random.default_rng(int(p["seed"]))
    k_data = int(p["data_modes"])
    u_true = prior_std(k_data) * rng.standard_normal(2 * k_data)
    y = (burgers_forward(model_for(k_data), u_true)
         + np.sqrt(p["gamma_scale"]) * rng.standard_normal(d_y))
    gamma = p["gamma_scale"] * np.eye(d_y)

    def build(k_max: int) -> OMFunctional:
        model = model_for(k_max)
        space = WeightedSpace(np.eye(2 * k_max))
        cov = np.diag(prior_std(k_max) ** 2)
        prior = GaussianMeasure(space.vector(np.zeros(2 * k_max)), space.operator(cov),
                                validate=False)
        precision = np.concatenate([eigenvalues(k_max) ** alpha,
                                    eigenvalues(k_max) ** alpha])
        return OMFunctional(lambda u: burgers_forward(model, u), y, gamma, prior,
                            prior_precision=lambda v, w=precision: w * v)

    def embed(u, k_from, k_to):
        out = np.zeros(2 * k_to)
        out[:k_from] = u[:k_from]
        out[k_to:k_to + k_from] = u[k_from:]
        return out

    def diff_norm(u_a, k_a, u_b, k_b):
        k_top = max(k_a, k_b)
        return float(np.linalg.norm(embed(u_a, k_a, k_top) - embed(u_b, k_b, k_top)))

    def sample(u, k_max, x):
        return model_for(k_max).point_values(real_to_complex(u), x)

    problem = RefinementProblem(build=build, embed=embed, diff_norm=diff_norm, sample=sample)
    return problem, y, u_true


def _run_map_burgers(p: dict, threads: int):
    problem, _, _ = build_burgers_problem(p)
    study = map_refinement_study(problem, [int(n) for n in p["n_list"]], tol=p["tol"])
    rows = []
    for i, row in enumerate(study["rows"]):
        diff = study["succ_diffs"][i - 1] if i > 0 else float("nan")
        rows.append([row.n, row.restarts, row.value, diff])
    diffs = study["succ_diffs"]
    values = [row.value for row in study["rows"]]
    checks = {
        "succ_diffs_strictly_decreasing": bool(
            all(diffs[i + 1] < diffs[i] for i in range(len(diffs) - 1))
        ),
        "values_non_increasing": bool(
            all(values[i + 1] <= values[i] + p["value_slack"] for i in range(len(values) - 1))
        ),
    }
    extras = {
        "succ_diffs": diffs, "values": values,
        "optimizer_errors": [row.error for row in study["rows"] if row.error],
    }
    return rows, extras, checks


_RUNNERS = {
    "fem-prior": _run_fem_prior,
    "fem-forward": _run_fem_forward,
    "fem-posterior": _run_fem_posterior,
    "graph-prior": _run_graph_prior,
    "graph-posterior": _run_graph_posterior,
    "eki": _run_eki,
    "effective-dim": _run_effective_dim,
    "map-linear": _run_map_linear,
    "map-burgers": _run_map_burgers,
}


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run(config: ExperimentConfig, threads: int = 1, spectral_cutoff=None) -> ResultBundle:
    """Execute one experiment and write CSV, .dat and JSON summary artifacts."""
    params = dict(config.params)
    if spectral_cutoff is not None and "spectral_cutoff" in params:
        params["spectral_cutoff"] = spectral_cutoff
    captured: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows, extras, checks = _RUNNERS[config.experiment](params, threads)
        captured = [str(w.message) for w in caught]
    passed = all(checks.values())
    summary = {
        "experiment": config.experiment,
        "params": {k: v for k, v in params.items()},
        "columns": _COLUMNS[config.experiment],
        "checks": checks,
        "passed": passed,
        "kernel_backend": kernels.BACKEND,
        "warnings": captured,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        **extras,
    }
    bundle = ResultBundle(experiment=config.experiment, columns=_COLUMNS[config.experiment],
                          rows=rows, summary=summary, passed=passed)
    _write_artifacts(config, bundle)
    return bundle


def _write_artifacts(config: ExperimentConfig, bundle: ResultBundle):
    outdir = config.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    stem = config.experiment
    csv_path = outdir / f"{stem}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(bundle.columns)
        for row in bundle.rows:
            writer.writerow([_format_cell(v) for v in row])
    dat_path = outdir / f"{stem}.dat"
    with open(dat_path, "w", encoding="utf-8") as handle:
        handle.write("# " + " ".join(bundle.columns) + "\n")
        for row in bundle.rows:
            handle.write(" ".join(_format_cell(v) for v in row) + "\n")
    json_path = outdir / f"{stem}_summary.json"
    json_path.write_text(json.dumps(bundle.summary, indent=2, default=_json_default) + "\n",
                         encoding="utf-8")
    bundle.csv_path = csv_path
    bundle.json_path = json_path


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value)}")
