"""Numpy implementation of the spectral Burgers time-stepping kernel.

Fallback for the compiled extension; both backends implement the same
contract and are compared by `benchmarks/bench_kernels.py` and the tests.

State: complex Fourier coefficients v_k for wavenumbers k = 1..K of a real
mean-zero field v(x) = sum_k 2 Re(v_k e^{2 pi i k x}). One step of size tau
advances dv_k/dt = -nu (2 pi k)^2 v_k - i pi k (v^2)_k + f_k with an exact
integrating factor on the viscous part and Heun's method on the rest.
"""

import numpy as np

BACKEND = "numpy"


def convolve_quadratic(v: np.ndarray) -> np.ndarray:
    """Galerkin-truncated coefficients (v^2)_k for k = 1..K.

    The convolution runs over all mode pairs p + q = k with p, q nonzero and
    |p|, |q| <= K; negative modes are the conjugates of positive ones.
    """
    k_max = v.shape[0]
    full = np.concatenate([np.conj(v[::-1]), [0.0 + 0.0j], v])
    conv = np.convolve(full, full)
    # full convolution index of wavenumber m is m + 2*k_max
    return conv[2 * k_max + 1: 3 * k_max + 1]


def _rhs(v: np.ndarray, wavenumbers: np.ndarray, forcing: np.ndarray) -> np.ndarray:
    return -1j * np.pi * wavenumbers * convolve_quadratic(v) + forcing


def integrate_modes(v0: np.ndarray, nu: float, forcing: np.ndarray,
                    t_end: float, n_steps: int, guard: float) -> tuple[np.ndarray, int]:
    """Advance the truncated system to t_end in n_steps steps.

    Returns (final modes, status); status 1 means the blow-up guard tripped
    (some |v_k| exceeded `guard`) and the returned state is the last one
    before the failed step.
    """
    v = np.array(v0, dtype=complex)
    k = np.arange(1, v.shape[0] + 1, dtype=float)
    forcing = np.asarray(forcing, dtype=complex)
    tau = t_end / n_steps
    decay = np.exp(-nu * (2.0 * np.pi * k) ** 2 * tau)
    for _ in range(n_steps):
        s1 = _rhs(v, k, forcing)
        predictor = decay * (v + tau * s1)
        s2 = _rhs(predictor, k, forcing)
        v_next = decay * v + 0.5 * tau * (decay * s1 + s2)
        if not np.all(np.abs(v_next) <= guard):
            return v, 1
        v = v_next
    return v, 0
