"""Single-chip timeline and per-layer cycle model.

Time is measured in steps, one step being the forward time of one layer.
A backward pass costs ``bw_ratio`` steps per layer, and the predictor adds
``alpha`` per layer forward and ``bw_ratio * alpha`` per layer backward
while it trains. Arithmetic is generic, so passing
:class:`fractions.Fraction` values gives exact results.

Hardware variants combine a layer's cost with the predictor's:

* ``MAX``: the predictor runs on its own PEs, so a layer costs the larger of the two.
* ``Efficient``: PEs are shared, so the costs add.
* ``LOW``: costs add, plus loading predictor weights and storing results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .layers import Conv2d, Dense
from .scheduler import phase_fractions as _phase_fractions

DATAFLOWS = ("WS", "OS", "IS", "RS")
VARIANTS = ("Baseline", "MAX", "Efficient", "LOW")
PHASES = ("Baseline", "BP", "GP")

# 1 + fill/drain fraction of a tile pass; parameters, not measurements
DATAFLOW_OVERHEAD = {
    "WS": Fraction(17, 16),
    "OS": Fraction(33, 32),
    "IS": Fraction(17, 16),
    "RS": Fraction(9, 8),
}


@dataclass(frozen=True)
class CostParams:
    n_layers: int = 4
    alpha: float = 0.02
    bw_ratio: float = 2
    pe_count: int = 180
    dataflow: str = "WS"
    variant: str = "Efficient"
    load_store_cost: float = 0
    layer_costs: tuple = field(default=())

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if not self.bw_ratio > 0:
            raise ValueError("bw_ratio must be > 0")
        if self.pe_count < 1:
            raise ValueError("pe_count must be >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.dataflow not in DATAFLOWS:
            raise ValueError(f"dataflow must be one of {DATAFLOWS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.load_store_cost < 0:
            raise ValueError("load_store_cost must be >= 0")

    def costs(self):
        """Per-layer forward cost; uniform unit layers unless given."""
        return tuple(self.layer_costs) if self.layer_costs else (1,) * self.n_layers


def single_chip_steps(params: CostParams, phase):
    """Closed-form step count for one batch on one chip."""
    n, a, bw = params.n_layers, params.alpha, params.bw_ratio
    if phase == "Baseline":
        return n * (1 + bw)
    if phase == "BP":
        return n * (1 + bw) * (1 + a)
    if phase == "GP":
        return n * (1 + a)
    raise ValueError(f"unknown phase {phase!r}")


def two_batch_steps(params: CostParams):
    """(ADA-GP steps for one BP + one GP batch, baseline steps for two batches)."""
    return (single_chip_steps(params, "BP") + single_chip_steps(params, "GP"),
            2 * single_chip_steps(params, "Baseline"))


def layer_macs(layer, in_shape=None, batch=1):
    if isinstance(layer, Dense):
        return batch * layer.in_features * layer.out_features
    if isinstance(layer, Conv2d):
        if in_shape is None:
            raise ValueError("conv layers need an input shape to count MACs")
        _, ho, wo = layer.output_shape(in_shape)
        return batch * layer.out_channels * layer.fan_in() * ho * wo
    return 0


def layer_cycles(layer, dataflow="WS", pe_count=180, in_shape=None, batch=1):
    """ceil(ceil(MACs / PEs) * dataflow overhead)."""
    tiles = -(-layer_macs(layer, in_shape, batch) // pe_count)
    return math.ceil(tiles * DATAFLOW_OVERHEAD[dataflow])


def variant_layer_cost(layer_cost, predictor_cost, variant, load_store_cost=0):
    if variant == "MAX":
        return max(layer_cost, predictor_cost)
    if variant == "Efficient":
        return layer_cost + predictor_cost
    if variant == "LOW":
        return layer_cost + predictor_cost + load_store_cost
    if variant == "Baseline":
        return layer_cost
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class TimelineResult:
    steps: dict
    per_layer: list


def timeline(params: CostParams) -> TimelineResult:
    """Per-layer composition of the three phase costs under the chosen variant.

    The predictor cost is ``alpha`` times the mean layer forward cost, so
    uniform unit layers reproduce :func:`single_chip_steps` exactly for
    the Efficient variant.
    """
    costs = params.costs()
    bw, v, ls = params.bw_ratio, params.variant, params.load_store_cost
    pred = params.alpha * Fraction(sum(costs)) / len(costs) if _is_exact(params) else \
        params.alpha * sum(costs) / len(costs)
    rows = []
    totals = {"Baseline": 0, "BP": 0, "GP": 0}
    for c in costs:
        fw = variant_layer_cost(c, pred, v, ls)
        back = variant_layer_cost(bw * c, bw * pred, v, ls)
        row = {"Baseline": c + bw * c, "BP": fw + back, "GP": fw}
        rows.append(row)
        for k in totals:
            totals[k] += row[k]
    return TimelineResult(totals, rows)


def _is_exact(params):
    vals = (params.alpha, params.bw_ratio, params.load_store_cost) + tuple(params.costs())
    return all(isinstance(x, (int, Fraction)) for x in vals)


def model_speedup(params: CostParams, fractions):
    """Baseline steps over the fraction-weighted ADA-GP steps.

    ``fractions`` is (warmup, bp, gp); warm-up batches cost the same as BP.
    """
    w, b, g = fractions
    if abs((w + b + g) - 1) > 1e-9:
        raise ValueError("phase fractions must sum to 1")
    t = timeline(params).steps
    return t["Baseline"] / ((w + b) * t["BP"] + g * t["GP"])


def model_layer_costs(spec, dataflow="WS", pe_count=180, batch=1):
    """Cycle counts for each trainable layer of a model spec."""
    out = []
    shape = tuple(spec.input_shape)
    for layer in spec.layers[:-1]:
        if layer.trainable:
            out.append(layer_cycles(layer, dataflow, pe_count, shape, batch))
        shape = layer.output_shape(shape)
    return tuple(out)


def measured_alpha(spec, predictor, batch=1):
    """Mean predictor MACs per prediction over mean trainable-layer MACs."""
    shape = tuple(spec.input_shape)
    layer_m, pred_m = [], []
    for layer in spec.layers[:-1]:
        out = layer.output_shape(shape)
        if layer.trainable:
            layer_m.append(layer_macs(layer, shape, batch))
            reorg = (out[0], 1, out[1], out[2]) if len(out) == 3 else (out[0], 1, 1, 1)
            pred_m.append(predictor.macs(reorg))
        shape = out
    return (sum(pred_m) / len(pred_m)) / (sum(layer_m) / len(layer_m))


def fractions_from_counts(counts):
    return _phase_fractions(counts)


def cost_report(params: CostParams, fractions=(0.0, 0.5, 0.5)):
    """JSON-ready summary of the timeline and speedup."""
    steps = {p: single_chip_steps(params, p) for p in PHASES}
    ada_two, base_two = two_batch_steps(params)
    tl = timeline(params)
    return {
        "format_version": 1,
        "params": {
            "n_layers": params.n_layers, "alpha": _num(params.alpha), "bw_ratio": _num(params.bw_ratio),
            "pe_count": params.pe_count, "dataflow": params.dataflow, "variant": params.variant,
            "load_store_cost": _num(params.load_store_cost),
            "layer_costs": [_num(c) for c in params.costs()],
        },
        "closed_form_steps": {p: _num(s) for p, s in steps.items()},
        "two_batch_steps": {"adagp": _num(ada_two), "baseline": _num(base_two)},
        "composed_steps": {p: _num(s) for p, s in tl.steps.items()},
        "phase_fractions": [_num(f) for f in fractions],
        "speedup": _num(model_speedup(params, fractions)),
    }


def _num(x):
    if isinstance(x, Fraction):
        return int(x) if x.denominator == 1 else float(x)
    return x
