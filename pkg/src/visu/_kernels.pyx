# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for the alignment losses and the glyph rasterizer.

Mirrors visu._kernels_py; see that module for the conventions.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, floor, ceil

cnp.import_array()


def _csr(mask):
    """Row-wise index lists of a boolean matrix as (indptr, indices)."""
    m = np.asarray(mask, dtype=bool)
    indptr = np.zeros(m.shape[0] + 1, dtype=np.intp)
    np.cumsum(m.sum(axis=1), out=indptr[1:])
    return indptr, np.ascontiguousarray(np.nonzero(m)[1], dtype=np.intp)


def cua_kernel(double[:, ::1] fa, double[:, ::1] fb, pos_, pos_excl_, neg_, double tau):
    # dense products go through BLAS; the gated sums walk sparse partner lists
    cdef Py_ssize_t n = fa.shape[0], d = fa.shape[1]
    cdef cnp.uint8_t[:, ::1] neg = np.ascontiguousarray(neg_, dtype=np.uint8)
    pp, pi = _csr(pos_)
    xp, xi = _csr(pos_excl_)
    cdef Py_ssize_t[::1] pos_ptr = pp, pos_idx = pi, pex_ptr = xp, pex_idx = xi
    s_np = np.asarray(fa) @ np.asarray(fb).T / tau
    coef_np = np.zeros((n, n))
    A_np = np.zeros((n, n))
    shift_np = np.zeros(n)
    cdef double[:, ::1] s = s_np
    cdef double[:, ::1] C = coef_np
    cdef double[:, ::1] A = A_np
    cdef double[::1] shift = shift_np
    cdef double[::1] e = np.empty(n)
    cdef double[::1] eneg = np.empty(n)
    cdef Py_ssize_t i, j, p, a_k, q_k
    cdef double m, negsum, a, w, wsum, value = 0.0, term
    cdef Py_ssize_t npos

    for i in range(n):
        npos = pos_ptr[i + 1] - pos_ptr[i]
        if npos == 0:
            continue
        m = 0.0
        for j in range(n):
            if fabs(s[i, j]) > m:
                m = fabs(s[i, j])
        shift[i] = m
        negsum = 0.0
        for j in range(n):
            e[j] = exp(s[i, j] - m)
            eneg[j] = exp(-s[i, j] - m)
            if neg[i, j]:
                negsum += e[j]
        term = 0.0
        wsum = 0.0
        for a_k in range(pos_ptr[i], pos_ptr[i + 1]):
            p = pos_idx[a_k]
            a = e[p]
            for q_k in range(pex_ptr[p], pex_ptr[p + 1]):
                a += eneg[pex_idx[q_k]]
            a += negsum
            A[i, p] = a
            term += s[i, p] - m - log(a)
            w = 1.0 / (npos * a)
            wsum += w
            C[i, p] += w * (a - e[p])
            for q_k in range(pex_ptr[p], pex_ptr[p + 1]):
                C[i, pex_idx[q_k]] += w * eneg[pex_idx[q_k]]
        value -= term / npos
        for j in range(n):
            if neg[i, j]:
                C[i, j] -= wsum * e[j]
    grad_np = coef_np @ np.asarray(fb) * (-1.0 / tau)
    return value, grad_np, A_np, shift_np


def cc_kernel(double[:, ::1] f, double[:, ::1] g, pos_excl_, neg_, double tau):
    cdef Py_ssize_t n = f.shape[0]
    cdef cnp.uint8_t[:, ::1] pex = np.ascontiguousarray(pos_excl_, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] neg = np.ascontiguousarray(neg_, dtype=np.uint8)
    s_np = np.asarray(f) @ np.asarray(g).T / tau
    coef_np = np.zeros((n, n))
    B_np = np.zeros(n)
    shift_np = np.zeros(n)
    cdef double[:, ::1] s = s_np
    cdef double[:, ::1] C = coef_np
    cdef double[::1] B = B_np
    cdef double[::1] shift = shift_np
    cdef double[::1] e = np.empty(n)
    cdef Py_ssize_t i, j
    cdef double m, b, term, value = 0.0
    cdef int npos

    for i in range(n):
        npos = 0
        m = 0.0
        for j in range(n):
            npos += pex[i, j]
            if fabs(s[i, j]) > m:
                m = fabs(s[i, j])
        shift[i] = m
        if npos == 0:
            continue
        b = 0.0
        for j in range(n):
            e[j] = exp(s[i, j] - m)
            if pex[i, j] or neg[i, j]:
                b += e[j]
        B[i] = b
        term = 0.0
        for j in range(n):
            if pex[i, j]:
                term += s[i, j] - m - log(b)
                C[i, j] -= 1.0 / npos
            if pex[i, j] or neg[i, j]:
                C[i, j] += e[j] / b
            C[i, j] /= tau
        value -= term / npos
    gf_np = coef_np @ np.asarray(g)
    gg_np = coef_np.T @ np.asarray(f)
    return value, gf_np, gg_np, B_np, shift_np


def raster_segments(segs_, double radius, Py_ssize_t height, Py_ssize_t width):
    cdef double[:, ::1] segs = np.ascontiguousarray(segs_, dtype=np.float64).reshape(-1, 4)
    out_np = np.zeros((height, width))
    cdef double[:, ::1] out = out_np
    cdef double reach = radius + 0.5
    cdef double x0, y0, x1, y1, dx, dy, ll, t, qx, qy, dist, cov
    cdef Py_ssize_t k, r, c, r0, r1, c0, c1
    for k in range(segs.shape[0]):
        x0 = segs[k, 0]; y0 = segs[k, 1]; x1 = segs[k, 2]; y1 = segs[k, 3]
        c0 = <Py_ssize_t>floor(min(x0, x1) - reach)
        c1 = <Py_ssize_t>ceil(max(x0, x1) + reach) + 1
        r0 = <Py_ssize_t>floor(min(y0, y1) - reach)
        r1 = <Py_ssize_t>ceil(max(y0, y1) + reach) + 1
        if c0 < 0: c0 = 0
        if r0 < 0: r0 = 0
        if c1 > width: c1 = width
        if r1 > height: r1 = height
        dx = x1 - x0
        dy = y1 - y0
        ll = dx * dx + dy * dy
        for r in range(r0, r1):
            for c in range(c0, c1):
                if ll > 0.0:
                    t = ((c - x0) * dx + (r - y0) * dy) / ll
                    if t < 0.0: t = 0.0
                    if t > 1.0: t = 1.0
                else:
                    t = 0.0
                qx = c - (x0 + t * dx)
                qy = r - (y0 + t * dy)
                dist = sqrt(qx * qx + qy * qy)
                cov = reach - dist
                if cov < 0.0: cov = 0.0
                if cov > 1.0: cov = 1.0
                if cov > out[r, c]:
                    out[r, c] = cov
    return out_np
