"""Kernel backend selection: compiled extension if available, numpy otherwise.

`BACKEND` reports which implementation is active; both expose
`integrate_modes` and `convolve_quadratic` with identical contracts.
"""

try:
    from . import _burgers_cy as _impl
except ImportError:  # extension not built; pure-Python install
    from . import _burgers_np as _impl

BACKEND: str = _impl.BACKEND
integrate_modes = _impl.integrate_modes
convolve_quadratic = _impl.convolve_quadratic
