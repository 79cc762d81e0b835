"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback.  ``QUADBSDE_PURE_PYTHON=1`` forces the fallback, which is how the
benchmark and the cross-backend tests reach both implementations.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_FORCE_PURE = os.environ.get("QUADBSDE_PURE_PYTHON", "") not in ("", "0")

if _compiled is not None and not _FORCE_PURE:
    BACKEND = "cython"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _fallback

HAVE_COMPILED = _compiled is not None


def backends():
    """Map of available backend name -> kernel module."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def philox_uniforms(seed, path_start, n_paths, n_steps, dim):
    return _impl.philox_uniforms(int(seed), int(path_start), int(n_paths), int(n_steps), int(dim))


def philox_block(c0, c1, c2, c3, k0, k1):
    return _impl.philox_block(c0, c1, c2, c3, k0, k1)


def tridiag_solve(lower, diag, upper, rhs):
    def c(a):
        return np.ascontiguousarray(a, dtype=np.float64)

    return _impl.tridiag_solve(c(lower), c(diag), c(upper), c(rhs))
