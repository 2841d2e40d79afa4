# Compiled 2-D convolution kernels (stride 1, explicit zero padding).
# Same contracts as conv_numpy.
#
# Inner loops run over contiguous output rows through raw pointers with a
# heap scratch row, so the C compiler can prove no aliasing and vectorize.
# Width-3 kernels (the only size used by the bundled model) get a fused
# path that touches each scratch row once per input row.

from libc.stdlib cimport free, malloc
from libc.string cimport memset

import numpy as np

BACKEND_NAME = "cython"


cdef inline double* _scratch(Py_ssize_t count) except NULL:
    cdef double* p = <double*> malloc(count * sizeof(double))
    if p == NULL:
        raise MemoryError()
    return p


def conv2d_forward(x, w, int pad):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(
        np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))))
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w)
    cdef int n = xv.shape[0], ci = xv.shape[1]
    cdef int co = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3]
    if wv.shape[1] != ci:
        raise ValueError(
            f"channel mismatch: input {ci}, weight {wv.shape[1]}")
    cdef int ho = xv.shape[2] - kh + 1
    cdef int wo = xv.shape[3] - kw + 1
    y = np.empty((n, co, ho, wo))
    cdef double[:, :, :, ::1] yv = y
    cdef double* buf = _scratch(wo)
    cdef double* xp
    cdef double* yp
    cdef int b, o, c, i, j, a, e
    cdef double w0, w1, w2, wk
    with nogil:
        for b in range(n):
            for o in range(co):
                for i in range(ho):
                    memset(buf, 0, wo * sizeof(double))
                    for c in range(ci):
                        for a in range(kh):
                            xp = &xv[b, c, i + a, 0]
                            if kw == 3:
                                w0 = wv[o, c, a, 0]
                                w1 = wv[o, c, a, 1]
                                w2 = wv[o, c, a, 2]
                                for j in range(wo):
                                    buf[j] += (w0 * xp[j] + w1 * xp[j + 1]
                                               + w2 * xp[j + 2])
                            else:
                                for e in range(kw):
                                    wk = wv[o, c, a, e]
                                    for j in range(wo):
                                        buf[j] += wk * xp[j + e]
                    yp = &yv[b, o, i, 0]
                    for j in range(wo):
                        yp[j] = buf[j]
    free(buf)
    return y


def conv2d_grad_input(w, gy, int pad, int h, int wd):
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(gy)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w)
    cdef int n = gv.shape[0], co = gv.shape[1]
    cdef int ho = gv.shape[2], wo = gv.shape[3]
    cdef int ci = wv.shape[1], kh = wv.shape[2], kw = wv.shape[3]
    cdef int hp = h + 2 * pad, wp = wd + 2 * pad
    gxp = np.empty((n, ci, hp, wp))
    cdef double[:, :, :, ::1] gxv = gxp
    # scratch holds one padded input-gradient plane so every accumulation
    # lands in compiler-visible fresh memory
    cdef double* plane = _scratch(hp * wp)
    cdef double* row
    cdef double* gp
    cdef double* outp
    cdef int b, o, c, i, j, a, e
    cdef double w0, w1, w2, wk, g
    with nogil:
        for b in range(n):
            for c in range(ci):
                memset(plane, 0, hp * wp * sizeof(double))
                for o in range(co):
                    for i in range(ho):
                        gp = &gv[b, o, i, 0]
                        for a in range(kh):
                            row = plane + (i + a) * wp
                            if kw == 3:
                                w0 = wv[o, c, a, 0]
                                w1 = wv[o, c, a, 1]
                                w2 = wv[o, c, a, 2]
                                for j in range(wo):
                                    g = gp[j]
                                    row[j] += w0 * g
                                    row[j + 1] += w1 * g
                                    row[j + 2] += w2 * g
                            else:
                                for e in range(kw):
                                    wk = wv[o, c, a, e]
                                    for j in range(wo):
                                        row[j + e] += wk * gp[j]
                for i in range(h):
                    row = plane + (i + pad) * wp + pad
                    outp = &gxv[b, c, i + pad, pad] if pad else &gxv[b, c, i, 0]
                    for j in range(wd):
                        outp[j] = row[j]
    free(plane)
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + wd])
    return gxp


def conv2d_grad_weight(x, gy, int pad, int kh, int kw):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(
        np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))))
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(gy)
    cdef int n = xv.shape[0], ci = xv.shape[1]
    cdef int co = gv.shape[1], ho = gv.shape[2], wo = gv.shape[3]
    gw = np.zeros((co, ci, kh, kw))
    cdef double[:, :, :, ::1] gwv = gw
    cdef double* xp
    cdef double* gp
    cdef int b, o, c, i, j, a, e
    cdef double a0, a1, a2, acc, g
    with nogil:
        for b in range(n):
            for o in range(co):
                for c in range(ci):
                    for a in range(kh):
                        if kw == 3:
                            a0 = a1 = a2 = 0.0
                            for i in range(ho):
                                gp = &gv[b, o, i, 0]
                                xp = &xv[b, c, i + a, 0]
                                for j in range(wo):
                                    g = gp[j]
                                    a0 += g * xp[j]
                                    a1 += g * xp[j + 1]
                                    a2 += g * xp[j + 2]
                            gwv[o, c, a, 0] += a0
                            gwv[o, c, a, 1] += a1
                            gwv[o, c, a, 2] += a2
                        else:
                            for e in range(kw):
                                acc = 0.0
                                for i in range(ho):
                                    gp = &gv[b, o, i, 0]
                                    xp = &xv[b, c, i + a, e]
                                    for j in range(wo):
                                        acc += gp[j] * xp[j]
                                gwv[o, c, a, e] += acc
    return gw
