# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: Philox4x32-10 uniforms and the Thomas tridiagonal sweep.

Both functions are bit-compatible with the numpy versions in ``_fallback``;
the Philox output is integer arithmetic followed by an exact int-to-double
conversion, so the two backends agree to the last bit.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint32_t, uint64_t

cnp.import_array()

cdef uint32_t PHILOX_M0 = 0xD2511F53U
cdef uint32_t PHILOX_M1 = 0xCD9E8D57U
cdef uint32_t PHILOX_W0 = 0x9E3779B9U
cdef uint32_t PHILOX_W1 = 0xBB67AE85U
cdef double TWO_M53 = 1.1102230246251565e-16  # 2**-53


cdef inline void _philox10(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t c0 = c[0], c1 = c[1], c2 = c[2], c3 = c[3]
    cdef int r
    for r in range(10):
        p0 = <uint64_t>PHILOX_M0 * <uint64_t>c0
        p1 = <uint64_t>PHILOX_M1 * <uint64_t>c2
        c0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
        c1 = <uint32_t>p1
        c2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
        c3 = <uint32_t>p0
        k0 = k0 + PHILOX_W0
        k1 = k1 + PHILOX_W1
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3


def philox_block(uint32_t c0, uint32_t c1, uint32_t c2, uint32_t c3,
                 uint32_t k0, uint32_t k1):
    """Raw Philox4x32-10 of a single counter; used for known-answer tests."""
    cdef uint32_t c[4]
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3
    _philox10(c, k0, k1)
    return (c[0], c[1], c[2], c[3])


def philox_uniforms(uint64_t seed, Py_ssize_t path_start, Py_ssize_t n_paths,
                    Py_ssize_t n_steps, Py_ssize_t dim):
    """Uniforms in (0, 1) of shape (n_paths, n_steps, dim).

    The variate for (path, step, coordinate) depends only on the seed and
    those three indices: counter = (step, path_lo, path_hi, coordinate // 2),
    key = (seed_lo, seed_hi).  Each 128-bit block yields two 53-bit uniforms.
    """
    out = np.empty((n_paths, n_steps, dim), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef uint32_t k0 = <uint32_t>(seed & 0xFFFFFFFFULL)
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint32_t c[4]
    cdef Py_ssize_t m, i, b, j
    cdef Py_ssize_t n_blocks = (dim + 1) // 2
    cdef uint64_t path, hi, lo
    with nogil:
        for m in range(n_paths):
            path = <uint64_t>(path_start + m)
            for i in range(n_steps):
                for b in range(n_blocks):
                    c[0] = <uint32_t>i
                    c[1] = <uint32_t>(path & 0xFFFFFFFFULL)
                    c[2] = <uint32_t>(path >> 32)
                    c[3] = <uint32_t>b
                    _philox10(c, k0, k1)
                    j = 2 * b
                    hi = <uint64_t>(c[0] >> 5)
                    lo = <uint64_t>(c[1] >> 6)
                    o[m, i, j] = (<double>((hi << 26) | lo) + 0.5) * TWO_M53
                    if j + 1 < dim:
                        hi = <uint64_t>(c[2] >> 5)
                        lo = <uint64_t>(c[3] >> 6)
                        o[m, i, j + 1] = (<double>((hi << 26) | lo) + 0.5) * TWO_M53
    return out


def tridiag_solve(const double[::1] lower, const double[::1] diag,
                  const double[::1] upper, const double[::1] rhs):
    """Solve a tridiagonal system by the Thomas algorithm.

    ``lower[i]`` multiplies ``x[i-1]`` and ``upper[i]`` multiplies ``x[i+1]``;
    ``lower[0]`` and ``upper[-1]`` are ignored.  Raises ZeroDivisionError on a
    zero pivot.
    """
    cdef Py_ssize_t n = diag.shape[0]
    if lower.shape[0] != n or upper.shape[0] != n or rhs.shape[0] != n:
        raise ValueError("tridiagonal bands and rhs must share one length")
    x = np.empty(n, dtype=np.float64)
    cp = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = x
    cdef double[::1] c = cp
    cdef double denom
    cdef Py_ssize_t i
    cdef bint singular = False
    if n == 0:
        return x
    with nogil:
        denom = diag[0]
        if denom == 0.0:
            singular = True
        else:
            c[0] = upper[0] / denom
            xv[0] = rhs[0] / denom
            for i in range(1, n):
                denom = diag[i] - lower[i] * c[i - 1]
                if denom == 0.0:
                    singular = True
                    break
                c[i] = upper[i] / denom
                xv[i] = (rhs[i] - lower[i] * xv[i - 1]) / denom
            if not singular:
                for i in range(n - 2, -1, -1):
                    xv[i] = xv[i] - c[i] * xv[i + 1]
    if singular:
        raise ZeroDivisionError("zero pivot in tridiagonal solve")
    return x
