"""Shared gradient predictor with per-filter tensor reorganization.

A layer's output activations are averaged over the batch and its output
channels become a pseudo-batch: ``(B, C, H, W) -> (C, 1, H, W)``. One small
network (adaptive average pool, 3x3 conv, ReLU, fully connected) maps each
channel row to a row of ``F_max`` values, where ``F_max`` is the widest
per-filter gradient row in the attached model. Narrower layers read only the
first ``fan_in + 1`` columns (weights then bias); the rest is masked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv2d, Dense, ReLU, ShapeError
from .model import GradEntry


@dataclass(frozen=True)
class ReorganizedInput:
    tensor: np.ndarray
    layer_index: int


@dataclass(frozen=True)
class PredictionMask:
    fan_in: int
    with_bias: bool = True

    @property
    def width(self):
        return self.fan_in + (1 if self.with_bias else 0)

    @classmethod
    def for_layer(cls, layer):
        return cls(layer.fan_in())


def reorganize(activations, layer_index=0):
    """Batch-mean activations with channels promoted to the batch axis."""
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim == 4:
        out = a.mean(axis=0)[:, None, :, :]
    elif a.ndim == 2:
        out = a.mean(axis=0)[:, None, None, None]
    else:
        raise ShapeError(f"cannot reorganize activations of rank {a.ndim}; expected 2 or 4")
    return ReorganizedInput(np.ascontiguousarray(out), layer_index)


def _pool_matrix(n_in, n_out):
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -((-(i + 1) * n_in) // n_out)
        m[i, start:end] = 1.0 / (end - start)
    return m


def required_width(spec):
    return max(l.fan_in() + 1 for l in spec.layers if l.trainable)


class PredictorNet:
    """Single predictor serving every trainable layer of one model."""

    def __init__(self, f_max, pool=7, conv_channels=8, seed=0, rng=None, params=None):
        self.f_max = int(f_max)
        self.pool = int(pool)
        self.conv = Conv2d(1, conv_channels, 3, 3, 1, 1)
        self.relu = ReLU()
        self.fc = Dense(conv_channels * pool * pool, self.f_max)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(seed)
            params = {
                "conv": self.conv.init_params(rng),
                # zero output layer: the first predictions are exactly zero
                "fc": {"weight": np.zeros((self.f_max, self.fc.in_features)), "bias": np.zeros(self.f_max)},
            }
        self.params = params
        self._pool_cache = {}

    @classmethod
    def for_model(cls, spec, **kwargs):
        return cls(required_width(spec), **kwargs)

    def parameter_count(self):
        return sum(a.size for p in self.params.values() for a in p.values())

    def flat_parameters(self):
        return np.concatenate([self.params[g][k].ravel() for g in sorted(self.params) for k in sorted(self.params[g])])

    def _pools(self, h, w):
        key = (h, w)
        if key not in self._pool_cache:
            self._pool_cache[key] = (_pool_matrix(h, self.pool), _pool_matrix(w, self.pool))
        return self._pool_cache[key]

    def forward_raw(self, x):
        """(C, 1, H, W) -> raw (C, F_max) plus caches for :meth:`backward_raw`."""
        ph, pw = self._pools(x.shape[2], x.shape[3])
        pooled = np.ascontiguousarray(np.einsum("sh,nchw,tw->ncst", ph, x, pw))
        h, c_conv = self.conv.forward(self.params["conv"], pooled)
        h, c_relu = self.relu.forward(None, h)
        flat = h.reshape(h.shape[0], -1)
        raw, c_fc = self.fc.forward(self.params["fc"], flat)
        return raw, (c_conv, c_relu, c_fc, h.shape)

    def backward_raw(self, caches, d_raw):
        c_conv, c_relu, c_fc, h_shape = caches
        d_flat, g_fc = self.fc.backward(self.params["fc"], c_fc, d_raw)
        d_h, _ = self.relu.backward(None, c_relu, d_flat.reshape(h_shape))
        _, g_conv = self.conv.backward(self.params["conv"], c_conv, d_h)
        return {"conv": g_conv, "fc": g_fc}

    def macs(self, reorg_shape):
        """Multiply-accumulates for one prediction on an input of this shape."""
        c, _, h, w = reorg_shape
        s2 = self.pool * self.pool
        return c * (h * w + self.conv.out_channels * 9 * s2 + self.fc.in_features * self.f_max)

    def to_dict(self):
        return {
            "f_max": self.f_max,
            "pool": self.pool,
            "conv_channels": self.conv.out_channels,
            "params": {g: {k: {"shape": list(v.shape), "data": [float(x).hex() for x in v.ravel()]}
                           for k, v in sorted(p.items())} for g, p in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, d):
        params = {g: {k: np.array([float.fromhex(x) for x in v["data"]]).reshape(v["shape"]) for k, v in p.items()}
                  for g, p in d["params"].items()}
        return cls(d["f_max"], d["pool"], d["conv_channels"], params=params)


def _check_width(net, mask):
    if mask.width > net.f_max:
        raise ShapeError(f"layer needs {mask.width} predicted values per filter but the predictor emits {net.f_max}; "
                         "rebuild the predictor for this model")


def entry_from_raw(raw, mask: PredictionMask, weight_shape):
    """Discard masked columns and reshape to the layer's parameter shapes."""
    rows = raw[:, :mask.width]
    weight = rows[:, :mask.fan_in].reshape(weight_shape)
    bias = rows[:, mask.fan_in] if mask.with_bias else np.zeros(weight_shape[0])
    return GradEntry(np.ascontiguousarray(weight), np.ascontiguousarray(bias))


def target_rows(entry: GradEntry, mask: PredictionMask):
    w = entry.weight.reshape(entry.weight.shape[0], -1)
    if mask.with_bias:
        return np.concatenate([w, entry.bias[:, None]], axis=1)
    return w


def masked_mse(raw, targets, mask: PredictionMask):
    """MSE over unmasked positions and its gradient w.r.t. the full raw output."""
    diff = raw[:, :mask.width] - targets
    loss = float(np.mean(diff * diff))
    d_raw = np.zeros_like(raw)
    d_raw[:, :mask.width] = 2.0 * diff / diff.size
    return loss, d_raw


def predict(net: PredictorNet, reorg: ReorganizedInput, layer, mask: PredictionMask | None = None):
    mask = mask or PredictionMask.for_layer(layer)
    _check_width(net, mask)
    rows = layer.param_shapes()["weight"][0]
    if reorg.tensor.shape[0] != rows:
        raise ShapeError(f"reorganized input has {reorg.tensor.shape[0]} rows, layer has {rows} filters")
    raw, _ = net.forward_raw(reorg.tensor)
    return entry_from_raw(raw, mask, layer.param_shapes()["weight"])


def train_predictor_step(net: PredictorNet, reorg: ReorganizedInput, true_entry: GradEntry, layer,
                         optimizer, mask: PredictionMask | None = None):
    """One optimizer step on the masked MSE between prediction and true gradient."""
    mask = mask or PredictionMask.for_layer(layer)
    _check_width(net, mask)
    shapes = layer.param_shapes()
    if true_entry.weight.shape != shapes["weight"] or true_entry.bias.shape != shapes["bias"]:
        raise ShapeError(f"true gradient shapes {true_entry.weight.shape}/{true_entry.bias.shape} do not match "
                         f"layer parameters {shapes['weight']}/{shapes['bias']}")
    raw, caches = net.forward_raw(reorg.tensor)
    loss, d_raw = masked_mse(raw, target_rows(true_entry, mask), mask)
    grads = net.backward_raw(caches, d_raw)
    net.params = {
        group: {name: optimizer.step(("predictor", group, name), net.params[group][name], grads[group][name])
                for name in net.params[group]}
        for group in net.params
    }
    return loss


def cosine_similarity(a: GradEntry, b: GradEntry):
    u = np.concatenate([a.weight.ravel(), a.bias.ravel()])
    v = np.concatenate([b.weight.ravel(), b.bias.ravel()])
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def is_predictable(layer):
    return isinstance(layer, (Dense, Conv2d))
