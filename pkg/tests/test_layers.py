import numpy as np
import pytest

from adagp.gradcheck import finite_diff_check, finite_diff_report
from adagp.layers import (
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

from .conftest import separated


def test_dense_forward_known_values():
    layer = Dense(2, 2)
    params = {"weight": np.array([[1.0, 2.0], [3.0, 4.0]]), "bias": np.array([0.5, -0.5])}
    y, _ = layer.forward(params, np.array([[1.0, 1.0]]))
    np.testing.assert_allclose(y, [[3.5, 6.5]])


def test_dense_backward_known_values():
    layer = Dense(2, 1)
    params = {"weight": np.array([[2.0, -1.0]]), "bias": np.zeros(1)}
    x = np.array([[1.0, 3.0], [2.0, 0.0]])
    _, cache = layer.forward(params, x)
    dx, g = layer.backward(params, cache, np.ones((2, 1)))
    np.testing.assert_allclose(g["weight"], [[3.0, 3.0]])
    np.testing.assert_allclose(g["bias"], [2.0])
    np.testing.assert_allclose(dx, [[2.0, -1.0], [2.0, -1.0]])


def test_conv_matches_direct_correlation(rng):
    layer = Conv2d(2, 3, 3, 3, stride=1, pad=1)
    params = layer.init_params(rng)
    x = rng.normal(size=(2, 2, 5, 5))
    y, _ = layer.forward(params, x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(y)
    for o in range(3):
        for i in range(5):
            for j in range(5):
                ref[:, o, i, j] = np.sum(xp[:, :, i:i + 3, j:j + 3] * params["weight"][o], axis=(1, 2, 3)) \
                    + params["bias"][o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_pool_outputs():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    mx, _ = MaxPool2d(2, 2).forward(None, x)
    av, _ = AvgPool2d(2, 2).forward(None, x)
    np.testing.assert_array_equal(mx[0, 0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(av[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_softmax_cross_entropy_uniform_logits():
    loss, cache = SoftmaxCrossEntropy().forward(None, np.zeros((3, 4)), np.array([0, 1, 2]))
    assert loss == pytest.approx(np.log(4))
    grad, _ = SoftmaxCrossEntropy().backward(None, cache)
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_softmax_is_stable_for_large_logits():
    loss, _ = SoftmaxCrossEntropy().forward(None, np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("layer,shape", [
    (Dense(4, 3), (2, 5)),
    (Conv2d(3, 2, 3, 3), (2, 2, 6, 6)),
    (MaxPool2d(2, 2), (2, 6)),
])
def test_shape_errors(layer, shape, rng):
    params = layer.init_params(rng)
    with pytest.raises(ShapeError):
        layer.forward(params, np.zeros(shape))


def test_cache_is_single_use(rng):
    layer = Dense(3, 2)
    params = layer.init_params(rng)
    _, cache = layer.forward(params, rng.normal(size=(1, 3)))
    layer.backward(params, cache, np.ones((1, 2)))
    with pytest.raises(StaleCacheError):
        layer.backward(params, cache, np.ones((1, 2)))


def test_cache_from_other_layer_rejected(rng):
    a, b = Dense(3, 2), Dense(3, 4)
    _, cache = a.forward(a.init_params(rng), rng.normal(size=(1, 3)))
    with pytest.raises(StaleCacheError):
        b.backward(b.init_params(rng), cache, np.ones((1, 4)))


def test_non_finite_detected():
    layer = Dense(1, 1)
    with pytest.raises(NonFiniteError):
        layer.forward({"weight": np.array([[np.inf]]), "bias": np.zeros(1)}, np.ones((1, 1)))


@pytest.mark.parametrize("layer", [Dense(3, 2), Conv2d(2, 4, 3, 2, 2, 1), MaxPool2d(3, 2), AvgPool2d(2, 1)])
def test_layer_dict_round_trip(layer):
    assert layer_from_dict(layer.to_dict()) == layer


@pytest.mark.parametrize("fragment,shape", [
    ([Dense(5, 3)], (4, 5)),
    ([Conv2d(2, 3, 3, 3, 1, 1)], (2, 2, 5, 5)),
    ([Conv2d(2, 2, 2, 3, 2, 0)], (2, 2, 7, 6)),
    ([ReLU()], (3, 7)),
    ([MaxPool2d(2, 2)], (2, 2, 4, 4)),
    ([AvgPool2d(3, 1)], (2, 2, 5, 5)),
    ([Flatten()], (2, 3, 2, 2)),
    ([Dense(4, 3), SoftmaxCrossEntropy()], (5, 4)),
])
@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(fragment, shape, seed):
    rng = np.random.default_rng(seed)
    params = [layer.init_params(rng) for layer in fragment]
    x = separated(rng, shape) if isinstance(fragment[0], (MaxPool2d, ReLU)) else rng.normal(size=shape)
    labels = rng.integers(0, 3, size=shape[0]) if isinstance(fragment[-1], SoftmaxCrossEntropy) else None
    assert finite_diff_check(fragment, params, x, labels, seed=seed) < 1e-6


def test_finite_diff_rejects_bad_epsilon(rng):
    with pytest.raises(ValueError):
        finite_diff_check([ReLU()], [{}], rng.normal(size=(1, 2)), epsilon=0)


def test_kink_straddling_steps_are_skipped():
    # pre-activation 0.5e-5 sits inside the +-1e-5 step, so that coordinate has no valid central difference
    x = np.array([[0.5e-5, 1.0, -1.0]])
    plain = finite_diff_report([ReLU()], [{}], x)
    aware = finite_diff_report([ReLU()], [{}], x, skip_kinks=True)
    assert plain.max_error > 1e-3
    assert (aware.checked, aware.skipped) == (2, 1)
    assert aware.max_error < 1e-8
