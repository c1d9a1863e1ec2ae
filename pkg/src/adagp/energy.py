"""Off-chip memory traffic per batch and the energy it costs.

Counts are in elements and cover the trainable layers. For a layer with
``P`` parameters (weights and bias), ``a_in`` input and ``a_out`` output
elements per sample, and batch size ``B``:

* forward: weight reads ``P``, activation reads ``B*a_in``, activation writes ``B*a_out``
* backward (true-gradient batches only): weight reads ``P``, activation
  reads ``B*a_in`` (saved input) plus ``B*a_out`` (incoming gradient),
  gradient writes ``P`` (weight gradient) plus ``B*a_in`` (input gradient)
* update: weight writes ``P`` in every phase, since predicted-gradient
  batches update the weights too

A predicted-gradient batch has no backward traffic at all. With a finite
on-chip buffer, weights are streamed in ``ceil(P / capacity)`` tiles and
the activations of that pass are re-read once per tile.

Predictor traffic is kept apart. By default it is left out of the energy,
which models a predictor whose weights stay resident on chip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .scheduler import BP, GP, WARMUP

PHASES = (WARMUP, BP, GP)


@dataclass(frozen=True)
class AccessCounts:
    fw_weight_reads: int = 0
    fw_activation_reads: int = 0
    fw_activation_writes: int = 0
    bw_weight_reads: int = 0
    bw_activation_reads: int = 0
    bw_gradient_writes: int = 0
    weight_writes: int = 0
    predictor_reads: int = 0
    predictor_writes: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{f.name} must be a non-negative integer, got {v!r}")

    def __add__(self, other):
        return AccessCounts(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    @property
    def reads(self):
        return self.fw_weight_reads + self.fw_activation_reads + self.bw_weight_reads + self.bw_activation_reads

    @property
    def writes(self):
        return self.fw_activation_writes + self.bw_gradient_writes + self.weight_writes

    @property
    def bw_reads(self):
        return self.bw_weight_reads + self.bw_activation_reads

    @property
    def weight_reads(self):
        return self.fw_weight_reads + self.bw_weight_reads

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class EnergyParams:
    """Per-element access energies in arbitrary units.

    Writes default to twice the cost of reads; only ratios matter for the
    reduction figures.
    """

    read_energy: float = 1.0
    write_energy: float = 2.0
    buffer_capacity: int | None = None  # elements; None means weights always fit
    include_predictor: bool = False

    def __post_init__(self):
        if not (self.read_energy > 0 and self.write_energy > 0):
            raise ValueError("access energies must be positive")
        if self.buffer_capacity is not None and self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1 or None")


def layer_sizes(spec):
    """(params, input elements, output elements) per trainable layer, per sample."""
    out = []
    outs = spec.layer_shapes()
    ins = [tuple(spec.input_shape)] + outs[:-1]
    for layer, in_shape, out_shape in zip(spec.layers, ins, outs):
        if layer.trainable:
            p = sum(math.prod(s) for s in layer.param_shapes().values())
            out.append((p, math.prod(in_shape), math.prod(out_shape)))
    return out


def predictor_parameter_count(spec, pool=7, conv_channels=8):
    f_max = max(l.fan_in() + 1 for l in spec.layers if l.trainable)
    return conv_channels * 9 + conv_channels + conv_channels * pool * pool * f_max + f_max


def count_accesses(spec, phase, batch_size=32, buffer_capacity=None, predictor_params=None):
    """Off-chip element accesses for one batch of ``phase``."""
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    backward = phase != GP
    c = dict.fromkeys((f.name for f in fields(AccessCounts)), 0)
    layers = layer_sizes(spec)
    for p, a_in, a_out in layers:
        tiles = 1 if buffer_capacity is None else -(-p // buffer_capacity)
        c["fw_weight_reads"] += p
        c["fw_activation_reads"] += tiles * batch_size * a_in
        c["fw_activation_writes"] += batch_size * a_out
        if backward:
            c["bw_weight_reads"] += p
            c["bw_activation_reads"] += tiles * batch_size * (a_in + a_out)
            c["bw_gradient_writes"] += p + batch_size * a_in
        c["weight_writes"] += p
    if predictor_params is None:
        predictor_params = predictor_parameter_count(spec)
    # one prediction per layer in every phase; training reads and writes once more
    c["predictor_reads"] = len(layers) * predictor_params * (2 if backward else 1)
    c["predictor_writes"] = len(layers) * predictor_params if backward else 0
    return AccessCounts(**c)


def energy_total(counts: AccessCounts, params: EnergyParams = EnergyParams()):
    e = params.read_energy * counts.reads + params.write_energy * counts.writes
    if params.include_predictor:
        e += params.read_energy * counts.predictor_reads + params.write_energy * counts.predictor_writes
    return e


def baseline_counts(spec, batch_size=32, buffer_capacity=None):
    """A plain backpropagation batch: no predictor traffic."""
    c = count_accesses(spec, BP, batch_size, buffer_capacity).as_dict()
    c["predictor_reads"] = c["predictor_writes"] = 0
    return AccessCounts(**c)


@dataclass(frozen=True)
class EnergyComparison:
    reduction: float
    f_bw: float
    baseline_energy: float
    mixed_energy: float

    def as_dict(self):
        return {"format_version": 1, "reduction": self.reduction, "f_bw": self.f_bw,
                "baseline_energy": self.baseline_energy, "mixed_energy": self.mixed_energy}


def _check_fractions(fractions):
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError("phase fractions (warmup, bp, gp) must be non-negative and sum to 1")


def compare_schedules(spec, phase_fractions, params: EnergyParams = EnergyParams(), batch_size=32):
    """Energy reduction of a warm-up/BP/GP mix against all-backprop training.

    ``f_bw`` is the backward share of one baseline batch's energy; without
    predictor traffic a 50/50 BP/GP mix gives a reduction of exactly ``f_bw / 2``.
    """
    _check_fractions(phase_fractions)
    cap = params.buffer_capacity
    base = baseline_counts(spec, batch_size, cap)
    e_base = energy_total(base, params)
    e_bw = params.read_energy * base.bw_reads + params.write_energy * base.bw_gradient_writes
    e_mixed = sum(f * energy_total(count_accesses(spec, ph, batch_size, cap), params)
                  for f, ph in zip(phase_fractions, PHASES))
    return EnergyComparison(1 - e_mixed / e_base, e_bw / e_base, e_base, e_mixed)


def break_even_gp_fraction(spec, params: EnergyParams = EnergyParams(), batch_size=32):
    """Smallest GP share (rest BP) at which the mix stops costing more than baseline."""
    cap = params.buffer_capacity
    e_base = energy_total(baseline_counts(spec, batch_size, cap), params)
    e_bp = energy_total(count_accesses(spec, BP, batch_size, cap), params)
    e_gp = energy_total(count_accesses(spec, GP, batch_size, cap), params)
    return (e_bp - e_base) / (e_bp - e_gp)


def sweep(spec, gp_fractions, params: EnergyParams = EnergyParams(), batch_size=32):
    """Reductions for BP/GP mixes with the given GP shares and no warm-up."""
    return [compare_schedules(spec, (0.0, 1 - g, g), params, batch_size).reduction for g in gp_fractions]
