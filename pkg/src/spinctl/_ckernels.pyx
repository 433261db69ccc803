# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled propagation kernels.

Same contract as :mod:`spinctl._pykernels`; loops run without the GIL so
callers can split a batch across threads.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, ceil, log2, ldexp

cnp.import_array()

cdef double THETA = 0.25
cdef int N_TERMS = 12


cdef inline void _mm(const double* a, const double* b, double* out) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(4):
        for j in range(4):
            acc = 0.0
            for k in range(4):
                acc = acc + a[4 * i + k] * b[4 * k + j]
            out[4 * i + j] = acc


cdef inline int _scaling(const double* g) noexcept nogil:
    cdef int i, j
    cdef double col, norm = 0.0
    for j in range(4):
        col = 0.0
        for i in range(4):
            col = col + fabs(g[4 * i + j])
        if col > norm:
            norm = col
    if norm > THETA:
        return <int>ceil(log2(norm / THETA))
    return 0


cdef void _expm_one(const double* g, double* p) noexcept nogil:
    cdef double x[16]
    cdef double term[16]
    cdef double tmp[16]
    cdef int i, k, j
    cdef int s = _scaling(g)
    cdef double scale = ldexp(1.0, -s)
    for i in range(16):
        x[i] = g[i] * scale
        term[i] = 0.0
        p[i] = 0.0
    for i in range(4):
        term[5 * i] = 1.0
        p[5 * i] = 1.0
    for k in range(1, N_TERMS + 1):
        _mm(x, term, tmp)
        for i in range(16):
            term[i] = tmp[i] / k
            p[i] = p[i] + term[i]
    for j in range(s):
        _mm(p, p, tmp)
        for i in range(16):
            p[i] = tmp[i]


cdef void _frechet_one(const double* g, const double* e, int nc,
                       double* p, double* d) noexcept nogil:
    # e, d: nc consecutive 4x4 blocks
    cdef double x[16]
    cdef double a[16]
    cdef double tmp[16]
    cdef double tmp2[16]
    cdef double es[64]
    cdef double bb[64]
    cdef int i, k, j, c
    cdef int s = _scaling(g)
    cdef double scale = ldexp(1.0, -s)
    for i in range(16):
        x[i] = g[i] * scale
        a[i] = 0.0
        p[i] = 0.0
    for i in range(4):
        a[5 * i] = 1.0
        p[5 * i] = 1.0
    for i in range(16 * nc):
        es[i] = e[i] * scale
        bb[i] = 0.0
        d[i] = 0.0
    for k in range(1, N_TERMS + 1):
        for c in range(nc):
            _mm(x, &bb[16 * c], tmp)
            _mm(&es[16 * c], a, tmp2)
            for i in range(16):
                bb[16 * c + i] = (tmp[i] + tmp2[i]) / k
                d[16 * c + i] = d[16 * c + i] + bb[16 * c + i]
        _mm(x, a, tmp)
        for i in range(16):
            a[i] = tmp[i] / k
            p[i] = p[i] + a[i]
    for j in range(s):
        for c in range(nc):
            _mm(p, &d[16 * c], tmp)
            _mm(&d[16 * c], p, tmp2)
            for i in range(16):
                d[16 * c + i] = tmp[i] + tmp2[i]
        _mm(p, p, tmp)
        for i in range(16):
            p[i] = tmp[i]


def expm_affine(G):
    """Batched matrix exponential of ``(m, 4, 4)`` generators."""
    cdef double[:, :, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t m = g.shape[0], i
    out = np.empty((m, 4, 4))
    cdef double[:, :, ::1] p = out
    with nogil:
        for i in range(m):
            _expm_one(&g[i, 0, 0], &p[i, 0, 0])
    return out


def expm_affine_frechet(G, E):
    """Exponential and Frechet derivatives, ``E`` of shape ``(m, c, 4, 4)``."""
    cdef double[:, :, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:, :, :, ::1] e = np.ascontiguousarray(E, dtype=np.float64)
    cdef Py_ssize_t m = g.shape[0], i
    cdef int nc = <int>e.shape[1]
    if nc > 4:
        raise ValueError("at most 4 derivative directions")
    P = np.empty((m, 4, 4))
    D = np.empty((m, nc, 4, 4))
    cdef double[:, :, ::1] p = P
    cdef double[:, :, :, ::1] d = D
    if nc == 0:
        return expm_affine(G), D
    with nogil:
        for i in range(m):
            _frechet_one(&g[i, 0, 0], &e[i, 0, 0, 0], nc, &p[i, 0, 0], &d[i, 0, 0, 0])
    return P, D


def forward_sweep(P, x0):
    cdef double[:, :, :, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[:, ::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef Py_ssize_t b = p.shape[0], n = p.shape[1], i, k, r
    X = np.empty((b, n + 1, 3))
    cdef double[:, :, ::1] xv = X
    with nogil:
        for i in range(b):
            for r in range(3):
                xv[i, 0, r] = x0v[i, r]
            for k in range(n):
                for r in range(3):
                    xv[i, k + 1, r] = (p[i, k, r, 0] * xv[i, k, 0]
                                       + p[i, k, r, 1] * xv[i, k, 1]
                                       + p[i, k, r, 2] * xv[i, k, 2]
                                       + p[i, k, r, 3])
    return X


def backward_sweep(P, lam_final):
    cdef double[:, :, :, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[:, ::1] lf = np.ascontiguousarray(lam_final, dtype=np.float64)
    cdef Py_ssize_t b = p.shape[0], n = p.shape[1], i, k, r
    L = np.empty((b, n + 1, 3))
    cdef double[:, :, ::1] lv = L
    with nogil:
        for i in range(b):
            for r in range(3):
                lv[i, n, r] = lf[i, r]
            for k in range(n - 1, -1, -1):
                for r in range(3):
                    lv[i, k, r] = (p[i, k, 0, r] * lv[i, k + 1, 0]
                                   + p[i, k, 1, r] * lv[i, k + 1, 1]
                                   + p[i, k, 2, r] * lv[i, k + 1, 2])
    return L


def accumulate_gradient(D, X, L):
    cdef double[:, :, :, :, ::1] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef double[:, :, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, :, ::1] lv = np.ascontiguousarray(L, dtype=np.float64)
    cdef Py_ssize_t b = d.shape[0], n = d.shape[1], nc = d.shape[2]
    cdef Py_ssize_t i, k, c, r
    cdef double acc, moved
    out = np.empty((b, n, nc))
    cdef double[:, :, ::1] g = out
    with nogil:
        for i in range(b):
            for k in range(n):
                for c in range(nc):
                    acc = 0.0
                    for r in range(3):
                        moved = (d[i, k, c, r, 0] * xv[i, k, 0]
                                 + d[i, k, c, r, 1] * xv[i, k, 1]
                                 + d[i, k, c, r, 2] * xv[i, k, 2]
                                 + d[i, k, c, r, 3])
                        acc = acc + moved * lv[i, k + 1, r]
                    g[i, k, c] = acc
    return out
