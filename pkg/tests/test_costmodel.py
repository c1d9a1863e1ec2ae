from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adagp.costmodel import (
    DATAFLOW_OVERHEAD,
    CostParams,
    cost_report,
    layer_cycles,
    layer_macs,
    measured_alpha,
    model_layer_costs,
    model_speedup,
    single_chip_steps,
    timeline,
    two_batch_steps,
    variant_layer_cost,
)
from adagp.layers import Conv2d, Dense, ReLU
from adagp.model import zoo_spec
from adagp.predictor import PredictorNet

ALPHAS = [F(0), F(1, 20), F(1, 4), F(1, 50)]
HALF = (F(0), F(1, 2), F(1, 2))


@pytest.mark.parametrize("alpha", ALPHAS)
def test_four_layer_closed_forms(alpha):
    p = CostParams(n_layers=4, alpha=alpha, bw_ratio=2)
    assert single_chip_steps(p, "Baseline") == 12
    assert single_chip_steps(p, "BP") == 12 + 12 * alpha
    assert single_chip_steps(p, "GP") == 4 + 4 * alpha
    assert two_batch_steps(p) == (16 + 16 * alpha, 24)


def test_single_layer_baseline():
    assert single_chip_steps(CostParams(n_layers=1, alpha=0), "Baseline") == 3


@pytest.mark.parametrize("alpha", ALPHAS)
def test_uniform_composition_reproduces_closed_form(alpha):
    p = CostParams(alpha=alpha)
    steps = timeline(p).steps
    for phase in ("Baseline", "BP", "GP"):
        assert steps[phase] == single_chip_steps(p, phase)


@pytest.mark.parametrize("alpha,expected", [(F(0), F(3, 2)), (F(1, 20), F(24) / F(84, 5))])
def test_two_batch_speedup(alpha, expected):
    assert model_speedup(CostParams(alpha=alpha), HALF) == expected


def test_speedup_at_default_alpha():
    assert model_speedup(CostParams(alpha=F(1, 50)), HALF) == F(24) / F(408, 25)
    assert float(model_speedup(CostParams(alpha=F(1, 50)), HALF)) == pytest.approx(1.4706, abs=1e-4)


def test_max_variant_band():
    s = model_speedup(CostParams(alpha=F(1, 50), variant="MAX"), HALF)
    assert 1.45 <= s <= 1.5


def test_bp_only_never_faster():
    assert model_speedup(CostParams(alpha=F(1, 50)), (F(1), F(0), F(0))) == 1 / F(51, 50)
    assert model_speedup(CostParams(alpha=F(1, 50)), (F(0), F(1), F(0))) < 1


def test_gp_only_limit_is_three():
    assert model_speedup(CostParams(alpha=F(0)), (F(0), F(0), F(1))) == 3
    assert model_speedup(CostParams(alpha=F(1, 10**6)), (F(0), F(0), F(1))) < 3


@pytest.mark.parametrize("args,expected", [
    ((10, 1, "MAX"), 10), ((10, 1, "Efficient"), 11), ((10, 1, "LOW", 3), 14), ((10, 1, "Baseline"), 10),
])
def test_variant_rules(args, expected):
    assert variant_layer_cost(*args) == expected


def test_unknown_variant():
    with pytest.raises(ValueError):
        variant_layer_cost(1, 1, "TURBO")


@settings(max_examples=50, deadline=None)
@given(layer=st.floats(0, 100), pred=st.floats(0, 100), ls=st.floats(0, 10))
def test_variant_ordering(layer, pred, ls):
    assert variant_layer_cost(layer, pred, "MAX") <= variant_layer_cost(layer, pred, "Efficient") \
        <= variant_layer_cost(layer, pred, "LOW", ls)


@settings(max_examples=50, deadline=None)
@given(alpha=st.fractions(F(1, 1000), F(1)), n=st.integers(1, 12), bw=st.fractions(F(1, 2), F(4)))
def test_phase_ordering(alpha, n, bw):
    p = CostParams(n_layers=n, alpha=alpha, bw_ratio=bw)
    assert single_chip_steps(p, "GP") < single_chip_steps(p, "Baseline") < single_chip_steps(p, "BP")


@settings(max_examples=50, deadline=None)
@given(g1=st.fractions(F(0), F(1)), g2=st.fractions(F(0), F(1)), a1=st.fractions(F(0), F(1, 2)),
       a2=st.fractions(F(0), F(1, 2)))
def test_speedup_monotone(g1, g2, a1, a2):
    lo, hi = sorted((g1, g2))
    p = CostParams(alpha=F(1, 50))
    assert model_speedup(p, (0, 1 - lo, lo)) <= model_speedup(p, (0, 1 - hi, hi))
    a_lo, a_hi = sorted((a1, a2))
    assert model_speedup(CostParams(alpha=a_lo), HALF) >= model_speedup(CostParams(alpha=a_hi), HALF)


def test_dense_cycles():
    assert layer_macs(Dense(10, 10)) == 100
    assert layer_cycles(Dense(10, 10), "WS", 180) == 2  # ceil(1 * 17/16)
    assert layer_cycles(Dense(10, 10), "OS", 180) == 2


def test_conv_macs():
    assert layer_macs(Conv2d(3, 8, 3, 3, 1, 1), (3, 16, 16)) == 8 * 27 * 256
    with pytest.raises(ValueError):
        layer_macs(Conv2d(3, 8, 3, 3), None)
    assert layer_macs(ReLU(), (3, 4, 4)) == 0


@pytest.mark.parametrize("dataflow", sorted(DATAFLOW_OVERHEAD))
@pytest.mark.parametrize("out_ch", [1, 3, 8, 40])
def test_cycles_monotone_and_bounded(dataflow, out_ch):
    a = layer_cycles(Conv2d(4, out_ch, 3, 3, 1, 1), dataflow, 180, (4, 10, 10))
    b = layer_cycles(Conv2d(4, 2 * out_ch, 3, 3, 1, 1), dataflow, 180, (4, 10, 10))
    assert b >= a
    macs = layer_macs(Conv2d(4, out_ch, 3, 3, 1, 1), (4, 10, 10))
    assert layer_cycles(Conv2d(4, out_ch, 3, 3, 1, 1), dataflow, 1, (4, 10, 10)) >= macs


@pytest.mark.parametrize("kw", [{"alpha": -0.1}, {"bw_ratio": 0}, {"pe_count": 0}, {"dataflow": "XS"},
                                {"variant": "FAST"}, {"n_layers": 0}, {"load_store_cost": -1}])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        CostParams(**kw)


def test_fractions_must_sum_to_one():
    with pytest.raises(ValueError):
        model_speedup(CostParams(), (0.5, 0.5, 0.5))


def test_model_layer_costs_and_measured_alpha(zoo):
    costs = model_layer_costs(zoo)
    assert len(costs) == len(zoo.trainable_indices) and all(c >= 1 for c in costs)
    assert measured_alpha(zoo, PredictorNet.for_model(zoo)) > 0


def test_report_is_plain_json_types():
    r = cost_report(CostParams(alpha=F(1, 50)), HALF)
    assert r["closed_form_steps"]["Baseline"] == 12
    assert r["two_batch_steps"] == {"adagp": 16.32, "baseline": 24}
    assert r["format_version"] == 1
