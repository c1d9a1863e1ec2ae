"""Hot convolution/pooling kernels with a compiled core and a numpy fallback.

The compiled extension is used when it was built and imports cleanly; set
``ADAGP_PURE_PYTHON=1`` to force the fallback. :data:`BACKEND` names the
active implementation.
"""
import os

import numpy as np

from . import _pykernels

_FORCE_PY = os.environ.get("ADAGP_PURE_PYTHON", "") not in ("", "0")

if _FORCE_PY:
    _ckernels = None
else:
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"

conv_out_size = _pykernels.conv_out_size


def available_backends():
    return ["python"] + (["cython"] if _ckernels is not None else [])


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or BACKEND
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not available")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


_impl = get_backend()


def use_backend(name):
    """Switch the active implementation; returns the previous backend name."""
    global _impl, BACKEND
    impl = get_backend(name)
    previous, _impl, BACKEND = BACKEND, impl, name
    return previous


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad):
    return _impl.col2im(np.ascontiguousarray(cols, dtype=np.float64), tuple(x_shape), kh, kw, stride, pad)


def maxpool2d_forward(x, k, stride):
    return _impl.maxpool2d_forward(np.ascontiguousarray(x, dtype=np.float64), k, stride)


def maxpool2d_backward(dout, argmax, x_shape):
    return _impl.maxpool2d_backward(
        np.ascontiguousarray(dout, dtype=np.float64),
        np.ascontiguousarray(argmax, dtype=np.int64),
        tuple(x_shape),
    )
