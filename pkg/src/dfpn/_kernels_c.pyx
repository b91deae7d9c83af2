# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled sampling primitives for the deformable convolution.

Same contracts as dfpn._kernels_py (see its module docstring for the
offset/tap conventions). The loops are nogil and parallelised over
independent (batch, channel) planes, so results are bitwise independent
of the thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor

NAME = "compiled"

ctypedef fused real:
    float
    double


def sample_tap(real[:, :, :, ::1] x, real[:, :, :, ::1] offsets, int kh, int kw, int j, int threads=1):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int ry = j // kw - kh // 2
    cdef int rx = j % kw - kw // 2
    cdef int oy = 2 * j, ox = 2 * j + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t idx, b, ch, y, xx, y0, x0
    cdef double sy, sx, fy, fx
    cdef real w00, w01, w10, w11, acc
    for idx in prange(n * c, nogil=True, schedule='static', num_threads=threads):
        b = idx // c
        ch = idx % c
        for y in range(h):
            for xx in range(w):
                sy = <double>y + ry + <double>offsets[b, oy, y, xx]
                sx = <double>xx + rx + <double>offsets[b, ox, y, xx]
                y0 = <Py_ssize_t>floor(sy)
                x0 = <Py_ssize_t>floor(sx)
                fy = sy - floor(sy)
                fx = sx - floor(sx)
                w00 = <real>((1.0 - fy) * (1.0 - fx))
                w01 = <real>((1.0 - fy) * fx)
                w10 = <real>(fy * (1.0 - fx))
                w11 = <real>(fy * fx)
                acc = <real>0
                if 0 <= y0 < h and 0 <= x0 < w:
                    acc = acc + w00 * x[b, ch, y0, x0]
                if 0 <= y0 < h and 0 <= x0 + 1 < w:
                    acc = acc + w01 * x[b, ch, y0, x0 + 1]
                if 0 <= y0 + 1 < h and 0 <= x0 < w:
                    acc = acc + w10 * x[b, ch, y0 + 1, x0]
                if 0 <= y0 + 1 < h and 0 <= x0 + 1 < w:
                    acc = acc + w11 * x[b, ch, y0 + 1, x0 + 1]
                out[b, ch, y, xx] = acc
    return out_arr


def scatter_tap(real[:, :, :, ::1] d_x, real[:, :, :, ::1] d_col, real[:, :, :, ::1] offsets,
                int kh, int kw, int j, int threads=1):
    cdef Py_ssize_t n = d_x.shape[0], c = d_x.shape[1], h = d_x.shape[2], w = d_x.shape[3]
    cdef int ry = j // kw - kh // 2
    cdef int rx = j % kw - kw // 2
    cdef int oy = 2 * j, ox = 2 * j + 1
    cdef Py_ssize_t idx, b, ch, y, xx, y0, x0
    cdef double sy, sx, fy, fx
    cdef real w00, w01, w10, w11, g
    # each (batch, channel) plane is owned by exactly one thread: no races
    for idx in prange(n * c, nogil=True, schedule='static', num_threads=threads):
        b = idx // c
        ch = idx % c
        for y in range(h):
            for xx in range(w):
                sy = <double>y + ry + <double>offsets[b, oy, y, xx]
                sx = <double>xx + rx + <double>offsets[b, ox, y, xx]
                y0 = <Py_ssize_t>floor(sy)
                x0 = <Py_ssize_t>floor(sx)
                fy = sy - floor(sy)
                fx = sx - floor(sx)
                w00 = <real>((1.0 - fy) * (1.0 - fx))
                w01 = <real>((1.0 - fy) * fx)
                w10 = <real>(fy * (1.0 - fx))
                w11 = <real>(fy * fx)
                g = d_col[b, ch, y, xx]
                if 0 <= y0 < h and 0 <= x0 < w:
                    d_x[b, ch, y0, x0] += w00 * g
                if 0 <= y0 < h and 0 <= x0 + 1 < w:
                    d_x[b, ch, y0, x0 + 1] += w01 * g
                if 0 <= y0 + 1 < h and 0 <= x0 < w:
                    d_x[b, ch, y0 + 1, x0] += w10 * g
                if 0 <= y0 + 1 < h and 0 <= x0 + 1 < w:
                    d_x[b, ch, y0 + 1, x0 + 1] += w11 * g
    return None


def offset_grad_tap(real[:, :, :, ::1] x, real[:, :, :, ::1] offsets, int kh, int kw, int j,
                    real[:, :, :, ::1] d_col, int threads=1):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int ry = j // kw - kh // 2
    cdef int rx = j % kw - kw // 2
    cdef int oy = 2 * j, ox = 2 * j + 1
    dtype = np.float32 if real is float else np.float64
    dsy_arr = np.zeros((n, h, w), dtype=dtype)
    dsx_arr = np.zeros((n, h, w), dtype=dtype)
    cdef real[:, :, ::1] dsy = dsy_arr
    cdef real[:, :, ::1] dsx = dsx_arr
    cdef Py_ssize_t b, ch, y, xx, y0, x0
    cdef double sy, sx, fy, fx
    cdef real v00, v01, v10, v11, g, ay, ax
    for b in prange(n, nogil=True, schedule='static', num_threads=threads):
        for y in range(h):
            for xx in range(w):
                sy = <double>y + ry + <double>offsets[b, oy, y, xx]
                sx = <double>xx + rx + <double>offsets[b, ox, y, xx]
                y0 = <Py_ssize_t>floor(sy)
                x0 = <Py_ssize_t>floor(sx)
                fy = sy - floor(sy)
                fx = sx - floor(sx)
                ay = <real>0
                ax = <real>0
                for ch in range(c):
                    v00 = <real>0
                    v01 = <real>0
                    v10 = <real>0
                    v11 = <real>0
                    if 0 <= y0 < h and 0 <= x0 < w:
                        v00 = x[b, ch, y0, x0]
                    if 0 <= y0 < h and 0 <= x0 + 1 < w:
                        v01 = x[b, ch, y0, x0 + 1]
                    if 0 <= y0 + 1 < h and 0 <= x0 < w:
                        v10 = x[b, ch, y0 + 1, x0]
                    if 0 <= y0 + 1 < h and 0 <= x0 + 1 < w:
                        v11 = x[b, ch, y0 + 1, x0 + 1]
                    g = d_col[b, ch, y, xx]
                    ay = ay + g * <real>(-(1.0 - fx) * v00 - fx * v01 + (1.0 - fx) * v10 + fx * v11)
                    ax = ax + g * <real>(-(1.0 - fy) * v00 + (1.0 - fy) * v01 - fy * v10 + fy * v11)
                dsy[b, y, xx] = ay
                dsx[b, y, xx] = ax
    return dsy_arr, dsx_arr
