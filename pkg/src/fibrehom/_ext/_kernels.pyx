# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled P1 element loops (triangle and periodic interval) and the axial stencil."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def tri_bloch_entries(const double[:, ::1] vertices, const long[:, ::1] triangles,
                      double t1, double t2):
    cdef Py_ssize_t nt = triangles.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] K = np.empty((nt, 9), dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] M = np.empty((nt, 9), dtype=np.float64)
    cdef double[:, ::1] Mv = M
    cdef double complex[:, ::1] Kv = K
    cdef Py_ssize_t e, a, b
    cdef long i0, i1, i2
    cdef double x0, y0, x1, y1, x2, y2, det, area, tt
    cdef double gx[3]
    cdef double gy[3]
    cdef double tg[3]
    cdef double mab, sab
    tt = t1 * t1 + t2 * t2
    for e in range(nt):
        i0 = triangles[e, 0]
        i1 = triangles[e, 1]
        i2 = triangles[e, 2]
        x0 = vertices[i0, 0]; y0 = vertices[i0, 1]
        x1 = vertices[i1, 0]; y1 = vertices[i1, 1]
        x2 = vertices[i2, 0]; y2 = vertices[i2, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        area = 0.5 * det
        gx[0] = (y1 - y2) / det; gy[0] = (x2 - x1) / det
        gx[1] = (y2 - y0) / det; gy[1] = (x0 - x2) / det
        gx[2] = (y0 - y1) / det; gy[2] = (x1 - x0) / det
        for a in range(3):
            tg[a] = t1 * gx[a] + t2 * gy[a]
        for a in range(3):
            for b in range(3):
                mab = area / 12.0 * (2.0 if a == b else 1.0)
                sab = area * (gx[a] * gx[b] + gy[a] * gy[b])
                Mv[e, 3 * a + b] = mab
                Kv[e, 3 * a + b] = (sab + tt * mab) + 1j * (area / 3.0 * (tg[a] - tg[b]))
    return K, M


def seg_bloch_entries(const double[::1] lengths, const double[::1] coef, double t3):
    cdef Py_ssize_t ne = lengths.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] K = np.empty((ne, 4), dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] M = np.empty((ne, 4), dtype=np.float64)
    cdef double[:, ::1] Mv = M
    cdef double complex[:, ::1] Kv = K
    cdef Py_ssize_t e, a, b
    cdef double l, c, mab
    cdef double d[2]
    for e in range(ne):
        l = lengths[e]
        c = coef[e]
        d[0] = -1.0 / l
        d[1] = 1.0 / l
        for a in range(2):
            for b in range(2):
                mab = l / 6.0 * (2.0 if a == b else 1.0)
                Mv[e, 2 * a + b] = mab
                Kv[e, 2 * a + b] = c * (d[a] * d[b] * l + t3 * t3 * mab) \
                    + 1j * (c * 0.5 * l * t3 * (d[a] - d[b]))
    return K, M


def periodic_tridiag_apply(const double complex[::1] d, const double complex[::1] up,
                           const double complex[::1] lo, const double complex[:, :, ::1] X):
    """``Y[a, i, q] = lo[i] X[a, i-1, q] + d[i] X[a, i, q] + up[i] X[a, i+1, q]`` (cyclic)."""
    cdef Py_ssize_t n2 = X.shape[0], n1 = X.shape[1], p = X.shape[2]
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] Y = np.empty((n2, n1, p), dtype=np.complex128)
    cdef double complex[:, :, ::1] Yv = Y
    cdef Py_ssize_t a, i, q, im, ip
    with nogil:
        for a in range(n2):
            for i in range(n1):
                im = i - 1 if i > 0 else n1 - 1
                ip = i + 1 if i < n1 - 1 else 0
                for q in range(p):
                    Yv[a, i, q] = lo[i] * X[a, im, q] + d[i] * X[a, i, q] + up[i] * X[a, ip, q]
    return Y
