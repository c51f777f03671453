"""Bayesian inverse problems discretized on weighted inner-product spaces.

Subpackages cover the coefficient-space linear algebra (`space`), finite
element and graph-Laplacian discretizations (`fem`, `graphs`), exact
linear-Gaussian posteriors with analytic spectral references (`gaussian`,
`reference`), ensemble Kalman updates (`ensemble`), MAP estimation with a
spectral Burgers forward model (`map_estimation`, `burgers`), and the batch
experiment harness behind the `wispi` command line (`harness`, `cli`).
"""

from .kernels import BACKEND as kernel_backend

__all__ = ["kernel_backend"]
__version__ = "0.1.0"
