"""Synthetic desk-scale datasets and a loader for small external image sets.

External image sets are ``.npz`` archives holding ``x_train`` (N, C, H, W),
``y_train`` (N,), ``x_eval`` and ``y_eval``; integer labels start at 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray
    num_classes: int

    @property
    def input_shape(self):
        return tuple(self.x_train.shape[1:])


def blobs(rng, n_train=512, n_eval=256, features=16, num_classes=4, spread=1.0):
    """Isotropic Gaussian clusters around random unit-scale centres."""
    centres = rng.normal(size=(num_classes, features)) * 2.0

    def draw(n):
        y = np.arange(n) % num_classes
        rng.shuffle(y)
        x = centres[y] + spread * rng.normal(size=(n, features))
        return x, y

    xt, yt = draw(n_train)
    xe, ye = draw(n_eval)
    return Dataset("blobs", xt, yt, xe, ye, num_classes)


def _pattern(kind, size, period, phase):
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == 0:
        wave = yy
    elif kind == 1:
        wave = xx
    elif kind == 2:
        wave = xx + yy
    else:
        block = max(1, period // 2)
        return np.where(((yy + phase) // block + (xx + phase) // block) % 2 == 0, 1.0, -1.0)
    return np.where(((wave + phase) % period) < period / 2, 1.0, -1.0)


def stripes(rng, n_train=512, n_eval=256, size=16, channels=3, num_classes=4, noise=0.5):
    """Horizontal, vertical, diagonal stripes and checkerboards with noise.

    Each sample gets a random period, phase and per-channel colour scale.
    """
    if not 1 <= num_classes <= 4:
        raise ValueError("stripes supports 1 to 4 classes")

    def draw(n):
        y = np.arange(n) % num_classes
        rng.shuffle(y)
        x = np.empty((n, channels, size, size))
        for i, label in enumerate(y):
            period = int(rng.integers(3, 7))
            phase = int(rng.integers(0, period))
            base = _pattern(label, size, period, phase)
            colour = rng.uniform(0.5, 1.0, size=channels) * rng.choice([-1.0, 1.0], size=channels)
            x[i] = colour[:, None, None] * base[None] + noise * rng.normal(size=(channels, size, size))
        return x, y

    xt, yt = draw(n_train)
    xe, ye = draw(n_eval)
    return Dataset("stripes", xt, yt, xe, ye, num_classes)


def load_image_set(path, name=None):
    with np.load(path) as f:
        x_train = np.asarray(f["x_train"], dtype=np.float64)
        y_train = np.asarray(f["y_train"], dtype=np.int64)
        x_eval = np.asarray(f["x_eval"], dtype=np.float64)
        y_eval = np.asarray(f["y_eval"], dtype=np.int64)
    if x_train.ndim != 4 or x_eval.shape[1:] != x_train.shape[1:]:
        raise ValueError(f"{path}: expected (N, C, H, W) arrays with matching sample shapes")
    if len(x_train) != len(y_train) or len(x_eval) != len(y_eval):
        raise ValueError(f"{path}: image and label counts differ")
    classes = int(max(y_train.max(), y_eval.max())) + 1
    return Dataset(name or str(path), x_train, y_train, x_eval, y_eval, classes)


DATASETS = {"blobs": blobs, "stripes": stripes}


def make_dataset(name, rng, **kwargs):
    if name in DATASETS:
        return DATASETS[name](rng, **kwargs)
    if str(name).endswith(".npz"):
        return load_image_set(name)
    raise ValueError(f"unknown dataset {name!r}; choose from {sorted(DATASETS)} or a .npz path")
