"""Pure numpy implementations of the convolution and pooling kernels.

These are the reference versions; the compiled module mirrors them loop for
loop so that both produce bit-identical results (accumulation order in
``col2im`` and ``maxpool2d_backward`` is part of the contract).
"""
import numpy as np


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """(N, C, H, W) -> (N*Ho*Wo, C*kh*kw), rows ordered (n, ho, wo)."""
    n, c, h, w = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=np.float64)
    for i in range(kh):
        i_end = i + stride * ho
        for j in range(kw):
            j_end = j + stride * wo
            cols[:, :, i, j, :, :] = xp[:, :, i:i_end:stride, j:j_end:stride]
    return np.ascontiguousarray(cols.transpose(0, 4, 5, 1, 2, 3)).reshape(n * ho * wo, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`; overlapping patches are summed in (i, j) order."""
    n, c, h, w = x_shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    cols6 = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(kh):
        i_end = i + stride * ho
        for j in range(kw):
            j_end = j + stride * wo
            xp[:, :, i:i_end:stride, j:j_end:stride] += cols6[:, :, i, j, :, :]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp


def maxpool2d_forward(x, k, stride):
    """Returns (out, argmax) with argmax the flat index into each (H*W) plane.

    Ties resolve to the first element in row-major window order.
    """
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.full((n, c, ho, wo), -np.inf)
    arg = np.zeros((n, c, ho, wo), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            win = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            better = win > out
            out = np.where(better, win, out)
            rows = np.arange(ho)[:, None] * stride + i
            cols = np.arange(wo)[None, :] * stride + j
            arg = np.where(better, rows * w + cols, arg)
    return out, arg


def maxpool2d_backward(dout, argmax, x_shape):
    n, c, h, w = x_shape
    dx = np.zeros((n * c, h * w), dtype=np.float64)
    flat_arg = argmax.reshape(n * c, -1)
    plane = np.repeat(np.arange(n * c), flat_arg.shape[1])
    np.add.at(dx, (plane, flat_arg.ravel()), dout.reshape(n * c, -1).ravel())
    return dx.reshape(n, c, h, w)
