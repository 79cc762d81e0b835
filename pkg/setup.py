"""Build script for the optional compiled kernels.

The package is fully functional without the extension: ``quadbsde.kernels``
falls back to the numpy implementations when ``quadbsde._kernels`` cannot be
imported.  Set ``QUADBSDE_NO_EXT=1`` to skip compilation entirely.
"""
import os
import sys

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("QUADBSDE_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        print("Cython or numpy unavailable; installing pure-Python kernels only", file=sys.stderr)
        return []

    extensions = [
        Extension(
            "quadbsde._kernels",
            [os.path.join("src", "quadbsde", "_kernels.pyx")],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ]
    return cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(ext_modules=_extensions())
