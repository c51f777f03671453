"""Build hook: compiles the optional Cython kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compilation downgrades to a pure-Python install
instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/wispi/_burgers_cy.pyx"],
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"wispi: skipping Cython kernel build ({exc}); using numpy fallback")

setup(ext_modules=ext_modules)
