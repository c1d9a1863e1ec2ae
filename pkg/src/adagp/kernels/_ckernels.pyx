# cython: language_level=3
"""Compiled convolution and pooling kernels.

Loop order follows ``_pykernels`` exactly so results are bit-identical.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((n * ho * wo, c * kh * kw), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, ci, i, j, oy, ox, y, xx, row, col
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    row = (b * ho + oy) * wo + ox
                    for ci in range(c):
                        for i in range(kh):
                            y = oy * stride + i - pad
                            if y < 0 or y >= h:
                                continue
                            for j in range(kw):
                                xx = ox * stride + j - pad
                                if xx < 0 or xx >= w:
                                    continue
                                col = (ci * kh + i) * kw + j
                                out[row, col] = x[b, ci, y, xx]
    return out_arr


def col2im(const double[:, ::1] cols, tuple x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    dx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ci, i, j, oy, ox, y, xx, row, col
    # (i, j) outermost per element keeps the summation order of the numpy path
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        col = (ci * kh + i) * kw + j
                        for oy in range(ho):
                            y = oy * stride + i - pad
                            if y < 0 or y >= h:
                                continue
                            for ox in range(wo):
                                xx = ox * stride + j - pad
                                if xx < 0 or xx >= w:
                                    continue
                                row = (b * ho + oy) * wo + ox
                                dx[b, ci, y, xx] += cols[row, col]
    return dx_arr


def maxpool2d_forward(const double[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    out_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ci, oy, ox, i, j, y, xx
    cdef double best, v
    cdef cnp.int64_t best_idx
    with nogil:
        for b in range(n):
            for ci in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        best = -1.0 / 0.0
                        best_idx = 0
                        for i in range(k):
                            y = oy * stride + i
                            for j in range(k):
                                xx = ox * stride + j
                                v = x[b, ci, y, xx]
                                if v > best:
                                    best = v
                                    best_idx = y * w + xx
                        out[b, ci, oy, ox] = best
                        arg[b, ci, oy, ox] = best_idx
    return out_arr, arg_arr


def maxpool2d_backward(const double[:, :, :, ::1] dout, const cnp.int64_t[:, :, :, ::1] argmax, tuple x_shape):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = dout.shape[2], wo = dout.shape[3]
    dx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr.reshape(n, c, h * w)
    cdef Py_ssize_t b, ci, oy, ox
    with nogil:
        for b in range(n):
            for ci in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        dx[b, ci, argmax[b, ci, oy, ox]] += dout[b, ci, oy, ox]
    return dx_arr
