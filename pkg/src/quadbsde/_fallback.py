"""numpy implementations of the compiled kernels.

These are selected by :mod:`quadbsde.kernels` when the Cython extension is
missing.  ``philox_uniforms`` reproduces the compiled stream bit for bit.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_M53 = 2.0**-53

# Paths per chunk; bounds the uint64 temporaries to a few hundred MB.
_CHUNK = 1 << 14


def _philox10(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _S32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def philox_block(c0, c1, c2, c3, k0, k1):
    """Raw Philox4x32-10 of a single counter; used for known-answer tests."""
    words = [np.uint64(w) for w in (c0, c1, c2, c3)]
    out = _philox10(*words, np.uint64(k0), np.uint64(k1))
    return tuple(int(w) for w in out)


def _to_unit(hi, lo):
    k = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (k.astype(np.float64) + 0.5) * _TWO_M53


def philox_uniforms(seed, path_start, n_paths, n_steps, dim):
    seed = int(seed)
    k0 = np.uint64(seed & 0xFFFFFFFF)
    k1 = np.uint64((seed >> 32) & 0xFFFFFFFF)
    n_blocks = (dim + 1) // 2
    out = np.empty((n_paths, n_steps, dim), dtype=np.float64)
    steps = np.arange(n_steps, dtype=np.uint64)[None, :, None]
    blocks = np.arange(n_blocks, dtype=np.uint64)[None, None, :]
    for start in range(0, n_paths, _CHUNK):
        stop = min(start + _CHUNK, n_paths)
        path = np.arange(path_start + start, path_start + stop, dtype=np.uint64)[:, None, None]
        shape = (stop - start, n_steps, n_blocks)
        c0 = np.broadcast_to(steps, shape)
        c1 = np.broadcast_to(path & _MASK32, shape)
        c2 = np.broadcast_to(path >> _S32, shape)
        c3 = np.broadcast_to(blocks, shape)
        w0, w1, w2, w3 = _philox10(c0, c1, c2, c3, k0, k1)
        out[start:stop, :, 0::2] = _to_unit(w0, w1)[:, :, : (dim + 1) // 2]
        if dim > 1:
            out[start:stop, :, 1::2] = _to_unit(w2, w3)[:, :, : dim // 2]
    return out


def tridiag_solve(lower, diag, upper, rhs):
    lower = np.ascontiguousarray(lower, dtype=np.float64)
    diag = np.ascontiguousarray(diag, dtype=np.float64)
    upper = np.ascontiguousarray(upper, dtype=np.float64)
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    n = diag.shape[0]
    if lower.shape[0] != n or upper.shape[0] != n or rhs.shape[0] != n:
        raise ValueError("tridiagonal bands and rhs must share one length")
    if n == 0:
        return np.empty(0)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    try:
        return solve_banded((1, 1), ab, rhs, check_finite=False)
    except LinAlgError as exc:
        raise ZeroDivisionError("zero pivot in tridiagonal solve") from exc
