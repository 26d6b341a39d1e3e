# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: column-wise simplex projection and the per-frequency
Woodbury solve of the abundance Sylvester system."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()


cdef int _cmp_desc(const void *a, const void *b) noexcept nogil:
    cdef double x = (<double *> a)[0]
    cdef double y = (<double *> b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


cdef inline void _sort_desc(double *buf, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    if p > 24:
        qsort(buf, p, sizeof(double), _cmp_desc)
        return
    for i in range(1, p):
        v = buf[i]
        j = i - 1
        while j >= 0 and buf[j] < v:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = v


def project_simplex_columns(V):
    cdef double[:, ::1] src = np.ascontiguousarray(V, dtype=np.float64)
    cdef Py_ssize_t p = src.shape[0], n = src.shape[1]
    out_arr = np.empty((p, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double *buf = <double *> malloc(max(p, 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, j, k, K
    cdef double css, css_K, tau, v
    try:
        with nogil:
            for j in range(n):
                for i in range(p):
                    buf[i] = src[i, j]
                _sort_desc(buf, p)
                css = -1.0
                K = 1
                css_K = buf[0] - 1.0
                for k in range(p):
                    css = css + buf[k]
                    if css / (k + 1) < buf[k]:
                        K = k + 1
                        css_K = css
                tau = css_K / K
                for i in range(p):
                    v = src[i, j] - tau
                    out[i, j] = v if v > 0.0 else 0.0
    finally:
        free(buf)
    return out_arr


def woodbury_combine(Chat, D, power, lambdas, double d_total):
    cdef double complex[:, :, :, :, ::1] C = np.ascontiguousarray(Chat, dtype=np.complex128)
    cdef double complex[:, :, :, ::1] Dv = np.ascontiguousarray(D, dtype=np.complex128)
    cdef double[:, ::1] pw = np.ascontiguousarray(power, dtype=np.float64)
    cdef double[::1] lam = np.ascontiguousarray(lambdas, dtype=np.float64)
    cdef Py_ssize_t p = C.shape[0], da = C.shape[1], m1 = C.shape[2]
    cdef Py_ssize_t db = C.shape[3], m2 = C.shape[4]
    out_arr = np.empty((p, da, m1, db, m2), dtype=np.complex128)
    cdef double complex[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t l, a, b, i, j
    cdef double complex s, dd
    cdef double inv_lam, denom
    with nogil:
        for l in range(p):
            inv_lam = 1.0 / lam[l]
            for i in range(m1):
                for j in range(m2):
                    s = 0
                    for a in range(da):
                        for b in range(db):
                            s = s + Dv[a, i, b, j] * C[l, a, i, b, j]
                    denom = lam[l] * d_total + pw[i, j]
                    s = s / denom
                    for a in range(da):
                        for b in range(db):
                            dd = Dv[a, i, b, j]
                            out[l, a, i, b, j] = (C[l, a, i, b, j] - (dd.real - 1j * dd.imag) * s) * inv_lam
    return out_arr
