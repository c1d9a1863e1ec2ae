import numpy as np
import pytest

from adagp.gradcheck import finite_diff_check
from adagp.layers import Conv2d, Dense, Flatten, MaxPool2d, ReLU, ShapeError, SoftmaxCrossEntropy, StaleCacheError
from adagp.model import ModelSpec, build_model, load_checkpoint, save_checkpoint, zoo_spec
from adagp.optim import OptimizerConfig, make_optimizer
from adagp.predictor import PredictorNet


@pytest.mark.parametrize("name,count", [("minimlp", 676), ("minicnn", 2420), ("minivgg", 14938)])
def test_zoo_parameter_counts(name, count):
    assert build_model(zoo_spec(name)).parameter_count() == count


def test_layer_shapes_end_with_logits(zoo):
    assert zoo.layer_shapes()[-2] == (zoo.num_classes,)


def test_bad_composition_names_both_layers():
    spec = ModelSpec("bad", (Conv2d(3, 4, 3, 3), Flatten(), Dense(10, 2), SoftmaxCrossEntropy()), (3, 8, 8), 2)
    with pytest.raises(ShapeError, match=r"layer 2 .* layer 1"):
        spec.layer_shapes()


def test_missing_loss_layer():
    with pytest.raises(ShapeError):
        ModelSpec("noloss", (Dense(4, 2),), (4,), 2).layer_shapes()


def test_spec_dict_round_trip(zoo):
    assert ModelSpec.from_dict(zoo.to_dict()) == zoo


def test_forward_trace_has_one_entry_per_trainable_layer(zoo, rng):
    model = build_model(zoo, seed=0)
    x = rng.normal(size=(3, *zoo.input_shape))
    loss, trace = model.forward_collect(x, rng.integers(0, zoo.num_classes, 3))
    assert np.isfinite(loss)
    assert len(trace) == len(zoo.trainable_indices)


def test_gradient_shapes_equal_weight_shapes(zoo, rng):
    model = build_model(zoo, seed=0)
    model.forward_collect(rng.normal(size=(2, *zoo.input_shape)), np.array([0, 1]))
    grads = model.backward_collect()
    for entry, layer in zip(grads.entries, model.trainable_layers):
        assert entry.weight.shape == layer.param_shapes()["weight"]
        assert entry.bias.shape == layer.param_shapes()["bias"]


def test_backward_order_is_last_layer_first(rng):
    spec = zoo_spec("minicnn")
    model = build_model(spec)
    seen = []
    model.forward_collect(rng.normal(size=(2, *spec.input_shape)), np.array([0, 1]))
    model.backward_collect(lambda t, e: seen.append(t))
    assert seen == [2, 1, 0]


def test_backward_needs_fresh_forward(rng):
    spec = zoo_spec("minimlp")
    model = build_model(spec)
    with pytest.raises(StaleCacheError):
        model.backward_collect()
    model.forward_collect(rng.normal(size=(2, 16)), np.array([0, 1]))
    model.backward_collect()
    with pytest.raises(StaleCacheError):
        model.backward_collect()
    model.forward_collect(rng.normal(size=(2, 16)), np.array([0, 1]), retain=False)
    with pytest.raises(StaleCacheError):
        model.backward_collect()
    assert model.backward_calls == 1


def test_model_gradient_matches_finite_differences(zoo_name):
    spec = zoo_spec(zoo_name)
    model = build_model(spec, seed=3)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, *spec.input_shape))
    y = rng.integers(0, spec.num_classes, 2)
    assert finite_diff_check(spec.layers, model.params, x, y, seed=3, max_coords=6) < 1e-6


def test_wrong_input_shape(rng):
    model = build_model(zoo_spec("minicnn"))
    with pytest.raises(ShapeError):
        model.forward_collect(rng.normal(size=(2, 3, 8, 8)), np.array([0, 1]))


def test_sgd_step_reduces_loss(rng):
    spec = ModelSpec("tiny", (Dense(4, 8), ReLU(), Dense(8, 2), SoftmaxCrossEntropy()), (4,), 2)
    model = build_model(spec, seed=1)
    opt = make_optimizer(OptimizerConfig(lr=0.1, momentum=0.0))
    x, y = rng.normal(size=(16, 4)), rng.integers(0, 2, 16)
    before, _ = model.forward_collect(x, y)
    model.apply_gradients(model.backward_collect(), opt)
    after, _ = model.forward_collect(x, y, retain=False)
    assert after < before


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    spec = zoo_spec("minicnn")
    model = build_model(spec, seed=7)
    pred = PredictorNet.for_model(spec, seed=8)
    pred.params["fc"]["weight"] = rng.normal(size=pred.params["fc"]["weight"].shape)
    path = tmp_path / "ck.json"
    save_checkpoint(path, model, pred, {"seed": 7})
    m2, p2, meta = load_checkpoint(path)
    assert meta == {"seed": 7}
    assert m2.spec == spec
    np.testing.assert_array_equal(m2.flat_parameters(), model.flat_parameters())
    np.testing.assert_array_equal(p2.flat_parameters(), pred.flat_parameters())
    save_checkpoint(tmp_path / "ck2.json", m2, p2, {"seed": 7})
    assert (tmp_path / "ck2.json").read_bytes() == path.read_bytes()


def test_checkpoint_version_checked(tmp_path):
    path = tmp_path / "ck.json"
    path.write_text('{"format_version": 99}')
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_maxpool_model_spec_validates_kernel():
    spec = ModelSpec("pool", (MaxPool2d(5, 5), Flatten(), Dense(3, 2), SoftmaxCrossEntropy()), (3, 4, 4), 2)
    with pytest.raises(ShapeError):
        spec.layer_shapes()
