"""Layer kinds with explicit forward/backward rules.

Tensors are plain float64 numpy arrays in row-major (N, C, H, W) or (N, D)
layout. Each layer's ``forward`` returns the output plus a :class:`Cache`
that its ``backward`` consumes exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class StaleCacheError(RuntimeError):
    pass


def check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


class Cache:
    """Saved tensors from one forward call; single use."""

    __slots__ = ("layer", "values", "used")

    def __init__(self, layer, **values):
        self.layer = layer
        self.values = values
        self.used = False

    def take(self, layer):
        if self.used:
            raise StaleCacheError(f"cache for {layer!r} was already consumed")
        if self.layer is not layer and self.layer != layer:
            raise StaleCacheError(f"cache belongs to {self.layer!r}, not {layer!r}")
        self.used = True
        return self.values


def _take(cache, layer):
    if cache is None:
        raise StaleCacheError(f"missing cache for {layer!r}")
    return cache.take(layer)


@dataclass(frozen=True)
class Layer:
    trainable: ClassVar[bool] = False
    kind: ClassVar[str] = "layer"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def param_shapes(self):
        return {}

    def init_params(self, rng):
        return {}

    def fan_in(self):
        return 0

    def forward(self, params, x, where=""):
        raise NotImplementedError

    def backward(self, params, cache, dy, where=""):
        raise NotImplementedError

    def to_dict(self):
        d = {"kind": self.kind}
        d.update(self.__dict__)
        return d


def _expect(cond, layer, where, got, want):
    if not cond:
        raise ShapeError(f"{where}{layer!r}: input shape {tuple(got)} does not match expected {want}")


def _uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class Dense(Layer):
    """y = x @ W.T + b with W stored (out_features, in_features)."""

    in_features: int
    out_features: int
    trainable: ClassVar[bool] = True
    kind: ClassVar[str] = "dense"

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"{self!r} cannot take input of shape {tuple(in_shape)}")
        return (self.out_features,)

    def param_shapes(self):
        return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}

    def fan_in(self):
        return self.in_features

    def init_params(self, rng):
        return {
            "weight": _uniform_init(rng, self.in_features, (self.out_features, self.in_features)),
            "bias": _uniform_init(rng, self.in_features, (self.out_features,)),
        }

    def forward(self, params, x, where=""):
        _expect(x.ndim == 2 and x.shape[1] == self.in_features, self, where, x.shape, f"(B, {self.in_features})")
        y = x @ params["weight"].T + params["bias"]
        return check_finite(y, f"{where}{self!r} forward"), Cache(self, x=x)

    def backward(self, params, cache, dy, where=""):
        x = _take(cache, self)["x"]
        dx = dy @ params["weight"]
        grads = {"weight": dy.T @ x, "bias": dy.sum(axis=0)}
        check_finite(dx, f"{where}{self!r} backward")
        return dx, grads


@dataclass(frozen=True)
class Conv2d(Layer):
    in_channels: int
    out_channels: int
    kh: int
    kw: int
    stride: int = 1
    pad: int = 0
    trainable: ClassVar[bool] = True
    kind: ClassVar[str] = "conv2d"

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"{self!r} cannot take input of shape {tuple(in_shape)}")
        ho = kernels.conv_out_size(in_shape[1], self.kh, self.stride, self.pad)
        wo = kernels.conv_out_size(in_shape[2], self.kw, self.stride, self.pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self!r} produces empty output from {tuple(in_shape)}")
        return (self.out_channels, ho, wo)

    def param_shapes(self):
        return {
            "weight": (self.out_channels, self.in_channels, self.kh, self.kw),
            "bias": (self.out_channels,),
        }

    def fan_in(self):
        return self.in_channels * self.kh * self.kw

    def init_params(self, rng):
        fan = self.fan_in()
        return {
            "weight": _uniform_init(rng, fan, self.param_shapes()["weight"]),
            "bias": _uniform_init(rng, fan, (self.out_channels,)),
        }

    def forward(self, params, x, where=""):
        _expect(x.ndim == 4 and x.shape[1] == self.in_channels, self, where, x.shape,
                f"(B, {self.in_channels}, H, W)")
        n = x.shape[0]
        _, ho, wo = self.output_shape(x.shape[1:])
        cols = kernels.im2col(x, self.kh, self.kw, self.stride, self.pad)
        wmat = params["weight"].reshape(self.out_channels, -1)
        y = (cols @ wmat.T + params["bias"]).reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        y = np.ascontiguousarray(y)
        return check_finite(y, f"{where}{self!r} forward"), Cache(self, cols=cols, x_shape=x.shape)

    def backward(self, params, cache, dy, where=""):
        v = _take(cache, self)
        cols, x_shape = v["cols"], v["x_shape"]
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        wmat = params["weight"].reshape(self.out_channels, -1)
        dw = (dy_flat.T @ cols).reshape(params["weight"].shape)
        db = dy_flat.sum(axis=0)
        dx = kernels.col2im(dy_flat @ wmat, x_shape, self.kh, self.kw, self.stride, self.pad)
        check_finite(dx, f"{where}{self!r} backward")
        return dx, {"weight": dw, "bias": db}


@dataclass(frozen=True)
class ReLU(Layer):
    kind: ClassVar[str] = "relu"

    def forward(self, params, x, where=""):
        mask = x > 0
        return x * mask, Cache(self, mask=mask)

    def backward(self, params, cache, dy, where=""):
        return dy * _take(cache, self)["mask"], {}


def _pool_out(self, in_shape):
    if len(in_shape) != 3:
        raise ShapeError(f"{self!r} needs (C, H, W) input, got {tuple(in_shape)}")
    ho = (in_shape[1] - self.k) // self.stride + 1
    wo = (in_shape[2] - self.k) // self.stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"{self!r} produces empty output from {tuple(in_shape)}")
    return (in_shape[0], ho, wo)


@dataclass(frozen=True)
class MaxPool2d(Layer):
    k: int
    stride: int
    kind: ClassVar[str] = "maxpool2d"

    output_shape = _pool_out

    def forward(self, params, x, where=""):
        _expect(x.ndim == 4, self, where, x.shape, "(B, C, H, W)")
        self.output_shape(x.shape[1:])
        out, arg = kernels.maxpool2d_forward(x, self.k, self.stride)
        return out, Cache(self, arg=arg, x_shape=x.shape)

    def backward(self, params, cache, dy, where=""):
        v = _take(cache, self)
        return kernels.maxpool2d_backward(dy, v["arg"], v["x_shape"]), {}


@dataclass(frozen=True)
class AvgPool2d(Layer):
    k: int
    stride: int
    kind: ClassVar[str] = "avgpool2d"

    output_shape = _pool_out

    def forward(self, params, x, where=""):
        _expect(x.ndim == 4, self, where, x.shape, "(B, C, H, W)")
        n, c, h, w = x.shape
        _, ho, wo = self.output_shape(x.shape[1:])
        out = np.zeros((n, c, ho, wo))
        for i in range(self.k):
            for j in range(self.k):
                out += x[:, :, i:i + self.stride * ho:self.stride, j:j + self.stride * wo:self.stride]
        return out / (self.k * self.k), Cache(self, x_shape=x.shape)

    def backward(self, params, cache, dy, where=""):
        x_shape = _take(cache, self)["x_shape"]
        _, _, ho, wo = dy.shape
        dx = np.zeros(x_shape)
        g = dy / (self.k * self.k)
        for i in range(self.k):
            for j in range(self.k):
                dx[:, :, i:i + self.stride * ho:self.stride, j:j + self.stride * wo:self.stride] += g
        return dx, {}


@dataclass(frozen=True)
class Flatten(Layer):
    kind: ClassVar[str] = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x, where=""):
        return x.reshape(x.shape[0], -1), Cache(self, x_shape=x.shape)

    def backward(self, params, cache, dy, where=""):
        return dy.reshape(_take(cache, self)["x_shape"]), {}


@dataclass(frozen=True)
class SoftmaxCrossEntropy(Layer):
    """Mean cross-entropy over the batch; integer class labels."""

    kind: ClassVar[str] = "softmax_ce"

    def forward(self, params, logits, labels=None, where=""):
        _expect(logits.ndim == 2, self, where, logits.shape, "(B, C)")
        labels = np.asarray(labels)
        if labels.shape != (logits.shape[0],):
            raise ShapeError(f"{where}labels of shape {labels.shape} do not match logits {logits.shape}")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_p = shifted - log_z
        n = logits.shape[0]
        loss = -log_p[np.arange(n), labels].mean()
        if not np.isfinite(loss):
            raise NonFiniteError(f"{where}non-finite loss")
        return float(loss), Cache(self, probs=np.exp(log_p), labels=labels)

    def backward(self, params, cache, dy=1.0, where=""):
        v = _take(cache, self)
        probs, labels = v["probs"], v["labels"]
        n = probs.shape[0]
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return grad * (dy / n), {}


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2d, ReLU, MaxPool2d, AvgPool2d, Flatten, SoftmaxCrossEntropy)}


def layer_from_dict(d):
    d = dict(d)
    cls = LAYER_KINDS[d.pop("kind")]
    return cls(**d)


def layer_forward(layer, params, x, where=""):
    return layer.forward(params, x, where=where)


def layer_backward(layer, params, cache, dy, where=""):
    return layer.backward(params, cache, dy, where=where)
