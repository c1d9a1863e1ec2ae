"""Declarative model specs, the desk model zoo, and whole-network passes.

:meth:`Model.forward_collect` records every trainable layer's output (the
activations the gradient predictor consumes) and
:meth:`Model.backward_collect` returns the true per-layer gradients without
touching parameters. :meth:`Model.apply_gradients` is the only mutator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import (
    AvgPool2d,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    NonFiniteError,
    ReLU,
    ShapeError,
    SoftmaxCrossEntropy,
    StaleCacheError,
    layer_from_dict,
)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple
    input_shape: tuple
    num_classes: int

    def layer_shapes(self):
        """Per-layer output shapes (batch dim excluded); validates composition."""
        if not self.layers:
            raise ShapeError(f"model {self.name!r} has no layers")
        if not isinstance(self.layers[-1], SoftmaxCrossEntropy):
            raise ShapeError(f"model {self.name!r} must end with a SoftmaxCrossEntropy layer")
        shapes = []
        shape = tuple(self.input_shape)
        for idx, layer in enumerate(self.layers[:-1]):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as err:
                prev = f"layer {idx - 1} ({self.layers[idx - 1]!r})" if idx else "the input"
                raise ShapeError(f"layer {idx} ({layer!r}) does not compose with {prev}: {err}") from None
            shapes.append(shape)
        if shape != (self.num_classes,):
            raise ShapeError(f"final output shape {shape} does not match {self.num_classes} classes")
        shapes.append(())
        return shapes

    @property
    def trainable_indices(self):
        return [i for i, l in enumerate(self.layers) if l.trainable]

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [_layer_dict(l) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(layer_from_dict(l) for l in d["layers"]),
                   tuple(d["input_shape"]), int(d["num_classes"]))


def _layer_dict(layer):
    return layer.to_dict()


def mini_mlp(in_features=16, hidden=32, num_classes=4):
    return ModelSpec("minimlp", (
        Dense(in_features, hidden), ReLU(),
        Dense(hidden, num_classes),
        SoftmaxCrossEntropy(),
    ), (in_features,), num_classes)


def mini_cnn(num_classes=4, channels=3, size=16):
    flat = 16 * (size // 4) * (size // 4)
    return ModelSpec("minicnn", (
        Conv2d(channels, 8, 3, 3, 1, 1), ReLU(), MaxPool2d(2, 2),
        Conv2d(8, 16, 3, 3, 1, 1), ReLU(), MaxPool2d(2, 2),
        Flatten(), Dense(flat, num_classes),
        SoftmaxCrossEntropy(),
    ), (channels, size, size), num_classes)


def mini_vgg(num_classes=10, channels=3, size=16):
    flat = 32 * (size // 8) * (size // 8)
    return ModelSpec("minivgg", (
        Conv2d(channels, 8, 3, 3, 1, 1), ReLU(), MaxPool2d(2, 2),
        Conv2d(8, 16, 3, 3, 1, 1), ReLU(), MaxPool2d(2, 2),
        Conv2d(16, 32, 3, 3, 1, 1), ReLU(), AvgPool2d(2, 2),
        Flatten(), Dense(flat, 64), ReLU(),
        Dense(64, num_classes),
        SoftmaxCrossEntropy(),
    ), (channels, size, size), num_classes)


ZOO = {"minimlp": mini_mlp, "minicnn": mini_cnn, "minivgg": mini_vgg}


def zoo_spec(name, **kwargs):
    try:
        return ZOO[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(ZOO)}") from None


@dataclass
class GradEntry:
    weight: np.ndarray
    bias: np.ndarray

    def as_dict(self):
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class GradientSet:
    """Per-trainable-layer gradients; ``kind`` is "true" or "predicted"."""

    kind: str
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


class Model:
    def __init__(self, spec: ModelSpec, params):
        self.spec = spec
        self.shapes = spec.layer_shapes()
        self.params = params
        self._caches = None
        self.backward_calls = 0

    @property
    def trainable_layers(self):
        return [self.spec.layers[i] for i in self.spec.trainable_indices]

    def parameter_count(self):
        return sum(a.size for p in self.params if p for a in p.values())

    def flat_parameters(self):
        return np.concatenate([p[k].ravel() for p in self.params if p for k in sorted(p)])

    def _run(self, batch, labels, on_layer=None, keep=True):
        spec = self.spec
        if tuple(batch.shape[1:]) != tuple(spec.input_shape):
            raise ShapeError(f"batch shape {batch.shape[1:]} does not match model input {spec.input_shape}")
        caches = []
        trace = []
        h = np.asarray(batch, dtype=np.float64)
        t = 0
        for idx, layer in enumerate(spec.layers[:-1]):
            try:
                h, cache = layer.forward(self.params[idx], h, where=f"layer {idx}: ")
            except NonFiniteError as err:
                raise NonFiniteError(f"{err} (model {spec.name!r}, layer {idx})") from None
            caches.append(cache)
            if layer.trainable:
                trace.append(h)
                if on_layer is not None:
                    on_layer(t, h)
                t += 1
        logits = h
        loss, cache = spec.layers[-1].forward(None, logits, labels, where=f"layer {len(spec.layers) - 1}: ")
        caches.append(cache)
        self._caches = caches if keep else None
        return loss, trace, logits

    def forward_collect(self, batch, labels, on_layer=None, retain=True):
        """Loss and per-trainable-layer outputs.

        ``on_layer(t, activation)`` is invoked right after trainable layer
        ``t`` produces its output; it may update that layer's parameters.
        With ``retain=False`` no backward caches are kept.
        """
        loss, trace, _ = self._run(batch, labels, on_layer, keep=retain)
        return loss, trace

    def logits(self, batch):
        h = np.asarray(batch, dtype=np.float64)
        for idx, layer in enumerate(self.spec.layers[:-1]):
            h, _ = layer.forward(self.params[idx], h)
        return h

    def backward_collect(self, on_grad=None):
        """True gradients for every trainable layer, last layer first.

        ``on_grad(t, entry)`` sees each entry as soon as it is computed.
        """
        if self._caches is None:
            raise StaleCacheError("backward_collect called without a preceding forward_collect")
        caches, self._caches = self._caches, None
        self.backward_calls += 1
        layers = self.spec.layers
        g, _ = layers[-1].backward(None, caches[-1])
        t = len(self.spec.trainable_indices)
        entries = [None] * t
        for idx in range(len(layers) - 2, -1, -1):
            g, grads = layers[idx].backward(self.params[idx], caches[idx], g, where=f"layer {idx}: ")
            if layers[idx].trainable:
                t -= 1
                entries[t] = GradEntry(grads["weight"], grads["bias"])
                if on_grad is not None:
                    on_grad(t, entries[t])
        return GradientSet("true", entries)

    def apply_layer_gradient(self, t, entry: GradEntry, optimizer):
        idx = self.spec.trainable_indices[t]
        p = self.params[idx]
        for name, g in (("weight", entry.weight), ("bias", entry.bias)):
            if g.shape != p[name].shape:
                raise ShapeError(f"layer {idx} {name} gradient shape {g.shape} != parameter shape {p[name].shape}")
        self.params[idx] = {
            "weight": optimizer.step((idx, "weight"), p["weight"], entry.weight),
            "bias": optimizer.step((idx, "bias"), p["bias"], entry.bias),
        }

    def apply_gradients(self, grads: GradientSet, optimizer):
        if len(grads) != len(self.spec.trainable_indices):
            raise ShapeError(f"gradient set has {len(grads)} entries, model has "
                             f"{len(self.spec.trainable_indices)} trainable layers")
        for t, entry in enumerate(grads.entries):
            self.apply_layer_gradient(t, entry, optimizer)


def build_model(spec: ModelSpec, seed=0, rng=None) -> Model:
    spec.layer_shapes()
    rng = rng if rng is not None else np.random.default_rng(seed)
    params = [layer.init_params(rng) for layer in spec.layers]
    return Model(spec, params)


def forward_collect(model, batch, labels, on_layer=None):
    return model.forward_collect(batch, labels, on_layer)


def backward_collect(model, on_grad=None):
    return model.backward_collect(on_grad)


def apply_gradients(model, grads, optimizer):
    model.apply_gradients(grads, optimizer)


# Checkpoints: JSON with every float stored via float.hex so reloads are bit-exact.

def _encode_params(params):
    return [
        {k: {"shape": list(v.shape), "data": [float(x).hex() for x in v.ravel()]} for k, v in sorted(p.items())}
        for p in params
    ]


def _decode_params(blob):
    return [
        {k: np.array([float.fromhex(x) for x in v["data"]], dtype=np.float64).reshape(v["shape"])
         for k, v in p.items()}
        for p in blob
    ]


def save_checkpoint(path, model, predictor=None, meta=None):
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "params": _encode_params(model.params),
        "predictor": predictor.to_dict() if predictor is not None else None,
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_checkpoint(path):
    """Returns ``(model, predictor_or_None, meta)``."""
    from .predictor import PredictorNet

    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    model = Model(ModelSpec.from_dict(doc["spec"]), _decode_params(doc["params"]))
    pred = PredictorNet.from_dict(doc["predictor"]) if doc["predictor"] else None
    return model, pred, doc["meta"]
