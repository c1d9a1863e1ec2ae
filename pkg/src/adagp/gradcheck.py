"""Central finite-difference oracle for layer stacks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import NonFiniteError, SoftmaxCrossEntropy


def _scalar_loss(fragment, params, x, labels, loss, proj):
    caches = []
    h = x
    for idx, layer in enumerate(fragment):
        if isinstance(layer, SoftmaxCrossEntropy):
            value, cache = layer.forward(None, h, labels)
            caches.append(cache)
            return value, caches, None
        h, cache = layer.forward(params[idx], h, where=f"layer {idx}: ")
        caches.append(cache)
    if loss == "quadratic":
        return 0.5 * float(np.sum(h * h)), caches, h
    if loss == "linear":
        return float(np.sum(proj * h)), caches, proj
    raise ValueError(f"unknown loss {loss!r}")


def analytic_grads(fragment, params, x, labels=None, loss="linear", proj=None):
    """Loss value, input gradient and per-layer parameter gradients."""
    value, caches, dy = _scalar_loss(fragment, params, x, labels, loss, proj)
    grads = [None] * len(fragment)
    g = dy
    for idx in range(len(caches) - 1, -1, -1):
        layer = fragment[idx]
        if isinstance(layer, SoftmaxCrossEntropy):
            g, _ = layer.backward(None, caches[idx])
            continue
        g, grads[idx] = layer.backward(params[idx], caches[idx], g)
    return value, g, grads


@dataclass(frozen=True)
class FiniteDiffReport:
    max_error: float
    checked: int
    skipped: int


def _switch_pattern(caches):
    """ReLU masks and max-pool winners: the piecewise-linear region of the input."""
    return [c.values[k] for c in caches for k in ("mask", "arg") if k in c.values]


def _same_region(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def finite_diff_check(fragment, params, x, labels=None, epsilon=1e-5, loss="linear",
                      seed=0, max_coords=None, check_input=True):
    """Max over checked coordinates of |analytic - numeric| / max(1, |numeric|).

    ``fragment`` is a sequence of layers and ``params`` the matching list of
    parameter dicts (empty for parameter-free layers). With ``loss="linear"``
    the scalar is a fixed random projection of the output; ``"quadratic"``
    uses half the squared norm; a trailing :class:`SoftmaxCrossEntropy` layer
    overrides both. ``max_coords`` samples that many coordinates per tensor.
    """
    return finite_diff_report(fragment, params, x, labels, epsilon, loss, seed, max_coords,
                              check_input).max_error


def finite_diff_report(fragment, params, x, labels=None, epsilon=1e-5, loss="linear",
                       seed=0, max_coords=None, check_input=True, skip_kinks=False):
    """Like :func:`finite_diff_check`, with coordinate counts.

    With ``skip_kinks`` a coordinate is left out, and counted as skipped,
    when the step ``+-epsilon`` flips a ReLU mask or moves a max-pool
    winner. The loss is not differentiable inside such a step, so the
    central difference there is not a valid reference.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    params = [{k: np.array(v, dtype=np.float64) for k, v in (p or {}).items()} for p in params]
    proj = None
    if loss == "linear" and not any(isinstance(l, SoftmaxCrossEntropy) for l in fragment):
        h = x
        for idx, layer in enumerate(fragment):
            h, _ = layer.forward(params[idx], h)
        proj = rng.normal(size=h.shape)

    _, dx, grads = analytic_grads(fragment, params, x, labels, loss, proj)

    def f():
        value, caches, _ = _scalar_loss(fragment, params, x, labels, loss, proj)
        return value, _switch_pattern(caches)

    base_region = f()[1]

    targets = []
    for idx, p in enumerate(params):
        for name, arr in p.items():
            targets.append((arr, grads[idx][name]))
    if check_input:
        targets.append((x, dx))

    worst, checked, skipped = 0.0, 0, 0
    for arr, ana in targets:
        flat = arr.reshape(-1)
        ana_flat = ana.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + epsilon
            plus, region_plus = f()
            flat[c] = orig - epsilon
            minus, region_minus = f()
            flat[c] = orig
            if skip_kinks and not (_same_region(base_region, region_plus)
                                   and _same_region(base_region, region_minus)):
                skipped += 1
                continue
            checked += 1
            num = (plus - minus) / (2.0 * epsilon)
            if not (np.isfinite(num) and np.isfinite(ana_flat[c])):
                raise NonFiniteError("non-finite value during finite-difference check")
            err = abs(ana_flat[c] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    return FiniteDiffReport(worst, checked, skipped)
