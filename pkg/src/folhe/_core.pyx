# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pointwise kernels.

Batched eigendecomposition of small Hermitian matrices by cyclic complex
Jacobi rotations. For the 2x2 blocks that dominate the grid this avoids the
per-matrix LAPACK setup cost; from 3x3 up batched LAPACK is faster (see
benchmarks/bench_core.py) and is used instead.
"""
import numpy as np
from libc.math cimport sqrt, fabs, hypot


BACKEND = "compiled"
JACOBI_MAX_RANK = 2


cdef void _jacobi(double complex[:, :, ::1] A3, double complex[:, :, ::1] V3,
                  double[:, ::1] w2, Py_ssize_t i, int r) noexcept nogil:
    cdef int p, q, k, sweep
    cdef double off, scale, b, tau, t, c, s
    cdef double complex e, ec, akp, akq, apk, aqk
    for p in range(r):
        for q in range(r):
            V3[i, p, q] = 1.0 if p == q else 0.0
    scale = 0.0
    for p in range(r):
        for q in range(r):
            scale += A3[i, p, q].real * A3[i, p, q].real + A3[i, p, q].imag * A3[i, p, q].imag
    for sweep in range(60):
        off = 0.0
        for p in range(r):
            for q in range(p + 1, r):
                off += A3[i, p, q].real * A3[i, p, q].real + A3[i, p, q].imag * A3[i, p, q].imag
        if off <= 1e-34 * scale or off == 0.0:
            break
        for p in range(r):
            for q in range(p + 1, r):
                b = hypot(A3[i, p, q].real, A3[i, p, q].imag)
                if b == 0.0:
                    continue
                e = A3[i, p, q] / b
                ec = e.conjugate()
                tau = (A3[i, q, q].real - A3[i, p, p].real) / (2.0 * b)
                if tau >= 0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                # A <- A G with G = diag(1, conj(e)) R
                for k in range(r):
                    akp = A3[i, k, p]
                    akq = A3[i, k, q]
                    A3[i, k, p] = c * akp - s * ec * akq
                    A3[i, k, q] = s * akp + c * ec * akq
                for k in range(r):
                    apk = A3[i, p, k]
                    aqk = A3[i, q, k]
                    A3[i, p, k] = c * apk - s * e * aqk
                    A3[i, q, k] = s * apk + c * e * aqk
                A3[i, p, q] = 0.0
                A3[i, q, p] = 0.0
                A3[i, p, p] = A3[i, p, p].real
                A3[i, q, q] = A3[i, q, q].real
                for k in range(r):
                    akp = V3[i, k, p]
                    akq = V3[i, k, q]
                    V3[i, k, p] = c * akp - s * ec * akq
                    V3[i, k, q] = s * akp + c * ec * akq
    for p in range(r):
        w2[i, p] = A3[i, p, p].real


def jacobi_eigh_batch(a):
    """Eigenvalues (ascending) and eigenvectors of a stack of Hermitian matrices.

    Parameters
    ----------
    a : ndarray, shape (..., r, r)
        Hermitian matrices; only exact Hermitian input gives meaningful output.

    Returns
    -------
    w : ndarray, shape (..., r)
    v : ndarray, shape (..., r, r)
        Columns are orthonormal eigenvectors.
    """
    arr = np.asarray(a)
    shape = arr.shape
    cdef int r = shape[len(shape) - 1]
    if r == 1:
        return (np.ascontiguousarray(arr[..., 0].real, dtype=np.float64),
                np.ones(shape, dtype=np.complex128))
    cdef Py_ssize_t nb = arr.size // (r * r)
    work = np.array(arr.reshape(nb, r, r), dtype=np.complex128, order="C", copy=True)
    vecs = np.empty((nb, r, r), dtype=np.complex128)
    vals = np.empty((nb, r), dtype=np.float64)
    cdef double complex[:, :, ::1] W = work
    cdef double complex[:, :, ::1] Vv = vecs
    cdef double[:, ::1] wv = vals
    cdef Py_ssize_t i
    with nogil:
        for i in range(nb):
            _jacobi(W, Vv, wv, i, r)
    order = np.argsort(vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=-1)
    return vals.reshape(shape[:-1]), vecs.reshape(shape)


def eigh_batch(a):
    """Jacobi for ranks up to ``JACOBI_MAX_RANK``, batched LAPACK above."""
    arr = np.asarray(a)
    if arr.shape[arr.ndim - 1] > JACOBI_MAX_RANK:
        return np.linalg.eigh(np.asarray(arr, dtype=np.complex128))
    return jacobi_eigh_batch(arr)
