# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled correlator kernels.

Semantics are identical to :mod:`hybrid_ccnn.kernels._pykernels`; see the
docstrings there. Inputs must be C-contiguous float64.
"""
import numpy as np


def correlate_valid(const double[:, :, ::1] x, const double[:, :, ::1] k):
    cdef Py_ssize_t B = x.shape[0], Nh = x.shape[1], Nw = x.shape[2]
    cdef Py_ssize_t nk = k.shape[0], Fh = k.shape[1], Fw = k.shape[2]
    cdef Py_ssize_t Mh = Nh - Fh + 1, Mw = Nw - Fw + 1
    if Mh < 1 or Mw < 1:
        raise ValueError("filter larger than input")
    out = np.zeros((B, nk, Mh, Mw), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, q, i, j, u, v
    cdef double kv
    with nogil:
        for b in range(B):
            for q in range(nk):
                for u in range(Fh):
                    for v in range(Fw):
                        kv = k[q, u, v]
                        if kv == 0.0:
                            continue
                        for i in range(Mh):
                            for j in range(Mw):
                                o[b, q, i, j] += kv * x[b, i + u, j + v]
    return out


def correlate_filter_grad(const double[:, :, ::1] x, const double[:, :, :, ::1] g,
                          Py_ssize_t Fh, Py_ssize_t Fw):
    cdef Py_ssize_t B = g.shape[0], nk = g.shape[1], Mh = g.shape[2], Mw = g.shape[3]
    out = np.zeros((nk, Fh, Fw), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, q, i, j, u, v
    cdef double acc
    with nogil:
        for q in range(nk):
            for u in range(Fh):
                for v in range(Fw):
                    acc = 0.0
                    for b in range(B):
                        for i in range(Mh):
                            for j in range(Mw):
                                acc = acc + g[b, q, i, j] * x[b, i + u, j + v]
                    o[q, u, v] = acc
    return out


cdef inline void _power_sums(const double[:, :, ::1] x, const double[:, :, ::1] k,
                             Py_ssize_t b, Py_ssize_t q, Py_ssize_t i, Py_ssize_t j,
                             int order, double* u1, double* s2, double* s3) noexcept nogil:
    cdef Py_ssize_t Fh = k.shape[1], Fw = k.shape[2], a, c
    cdef double t, p1 = 0.0, p2 = 0.0, p3 = 0.0
    for a in range(Fh):
        for c in range(Fw):
            t = k[q, a, c] * x[b, i + a, j + c]
            p1 = p1 + t
            if order >= 2:
                p2 = p2 + t * t
                if order >= 3:
                    p3 = p3 + t * t * t
    u1[0] = p1
    s2[0] = p2
    s3[0] = p3


def pooled_correlators(const double[:, :, ::1] x, const double[:, :, ::1] k,
                       const double[:, ::1] w, int order):
    cdef Py_ssize_t B = x.shape[0], Nh = x.shape[1], Nw = x.shape[2]
    cdef Py_ssize_t nk = k.shape[0], Fh = k.shape[1], Fw = k.shape[2]
    cdef Py_ssize_t Mh = Nh - Fh + 1, Mw = Nw - Fw + 1
    if w.shape[0] != Mh or w.shape[1] != Mw:
        raise ValueError("weight map shape does not match output domain")
    if order < 1 or order > 3:
        raise ValueError("order must be 1, 2 or 3")
    out = np.zeros((B, nk, order), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, q, i, j
    cdef double u, s2, s3, wx, f1, f2, f3
    with nogil:
        for b in range(B):
            for q in range(nk):
                f1 = 0.0
                f2 = 0.0
                f3 = 0.0
                for i in range(Mh):
                    for j in range(Mw):
                        wx = w[i, j]
                        if wx == 0.0:
                            continue
                        _power_sums(x, k, b, q, i, j, order, &u, &s2, &s3)
                        f1 = f1 + wx * u
                        if order >= 2:
                            f2 = f2 + wx * (u * u - s2)
                            if order >= 3:
                                f3 = f3 + wx * (u * u * u - 3.0 * u * s2 + 2.0 * s3)
                o[b, q, 0] = f1
                if order >= 2:
                    o[b, q, 1] = f2
                if order >= 3:
                    o[b, q, 2] = f3
    return out


def pooled_correlators_backward(const double[:, :, ::1] x, const double[:, :, ::1] k,
                                const double[:, ::1] w, const double[:, :, ::1] dfeat):
    cdef Py_ssize_t B = x.shape[0], Nh = x.shape[1], Nw = x.shape[2]
    cdef Py_ssize_t nk = k.shape[0], Fh = k.shape[1], Fw = k.shape[2]
    cdef Py_ssize_t Mh = Nh - Fh + 1, Mw = Nw - Fw + 1
    cdef int order = <int>dfeat.shape[2]
    if w.shape[0] != Mh or w.shape[1] != Mw:
        raise ValueError("weight map shape does not match output domain")
    dk_arr = np.zeros((nk, Fh, Fw), dtype=np.float64)
    dw_arr = np.zeros((Mh, Mw), dtype=np.float64)
    cdef double[:, :, ::1] dk = dk_arr
    cdef double[:, ::1] dw = dw_arr
    cdef Py_ssize_t b, q, i, j, a, c
    cdef double u, s2, s3, wx, d1, d2, d3, gu, gs2, gs3, kv, xv, cm
    with nogil:
        for b in range(B):
            for q in range(nk):
                d1 = dfeat[b, q, 0]
                d2 = dfeat[b, q, 1] if order >= 2 else 0.0
                d3 = dfeat[b, q, 2] if order >= 3 else 0.0
                if d1 == 0.0 and d2 == 0.0 and d3 == 0.0:
                    continue
                for i in range(Mh):
                    for j in range(Mw):
                        _power_sums(x, k, b, q, i, j, order, &u, &s2, &s3)
                        cm = d1 * u
                        if order >= 2:
                            cm = cm + d2 * (u * u - s2)
                            if order >= 3:
                                cm = cm + d3 * (u * u * u - 3.0 * u * s2 + 2.0 * s3)
                        dw[i, j] += cm
                        wx = w[i, j]
                        if wx == 0.0:
                            continue
                        gu = wx * (d1 + 2.0 * d2 * u + 3.0 * d3 * (u * u - s2))
                        gs2 = wx * (-d2 - 3.0 * d3 * u)
                        gs3 = wx * (2.0 * d3)
                        for a in range(Fh):
                            for c in range(Fw):
                                kv = k[q, a, c]
                                xv = x[b, i + a, j + c]
                                dk[q, a, c] += xv * (gu + xv * kv * (2.0 * gs2 + 3.0 * gs3 * kv * xv))
    return dk_arr, dw_arr
