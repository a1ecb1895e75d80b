# test_nn_core.py
# Слои сети, проверка градиентов конечными разностями, Adam

import numpy as np
import pytest

from errors import PreconditionError, ShapeError, TrainingDivergenceError
from nn_core import (
    AdamState,
    Conv1D,
    Dense,
    Flatten,
    LossWeights,
    ReLU,
    adam_update,
    backward,
    build_model,
    denormalize_frequency,
    forward,
    forward_batch,
    loss,
    normalize_frequency,
    optimizer_step,
    standardize,
)
from rng_utils import make_rng
from signal_gen import SignalWindow


def _numeric_grad(fn, array, index, eps=1e-6):
    original = array[index]
    array[index] = original + eps
    plus = fn()
    array[index] = original - eps
    minus = fn()
    array[index] = original
    return (plus - minus) / (2 * eps)


def test_frequency_normalization():
    assert normalize_frequency(100.0) == 0.0
    assert normalize_frequency(500.0) == 1.0
    assert denormalize_frequency(normalize_frequency(280.0)) == pytest.approx(280.0)


def test_standardize_keeps_zero_window():
    x = np.zeros((2, 8))
    np.testing.assert_array_equal(standardize(x), x)
    y = standardize(np.array([[1.0, 2.0, 3.0, 4.0]]))
    assert y.mean() == pytest.approx(0.0)
    assert y.std() == pytest.approx(1.0, rel=1e-6)


def test_conv1d_same_padding_matches_direct_convolution():
    rng = make_rng(0)
    layer = Conv1D("c", 1, 1, 3, rng, dtype=np.float64)
    layer.params["weight"][...] = np.array([[[1.0, 2.0, 3.0]]])
    layer.params["bias"][...] = 0.5
    x = np.arange(5.0).reshape(1, 1, 5)
    y, _ = layer.forward(x)
    # корреляция с ядром [1, 2, 3] и нулевым паддингом
    expected = np.array([0 * 1 + 0 * 2 + 1 * 3, 0 + 2 + 6, 1 + 4 + 9, 2 + 6 + 12, 3 + 8 + 0]) + 0.5
    np.testing.assert_allclose(y[0, 0], expected)


def test_conv1d_rejects_even_kernel_and_wrong_channels():
    with pytest.raises(ShapeError):
        Conv1D("c", 1, 2, 4)
    layer = Conv1D("c", 2, 3, 3)
    with pytest.raises(ShapeError):
        layer.forward(np.zeros((1, 1, 10), dtype=np.float32))


@pytest.mark.parametrize("make_layer, shape", [
    (lambda rng: Conv1D("conv", 2, 3, 5, rng, dtype=np.float64), (2, 2, 9)),
    (lambda rng: Dense("dense", 6, 4, rng, dtype=np.float64), (3, 6)),
    (lambda rng: ReLU("relu"), (2, 3, 7)),
    (lambda rng: Flatten("flatten"), (2, 3, 4)),
])
def test_layer_gradients_match_finite_differences(make_layer, shape):
    rng = make_rng(1)
    layer = make_layer(rng)
    x = rng.standard_normal(shape)
    y, cache = layer.forward(x)
    upstream = rng.standard_normal(y.shape)

    def objective():
        out, _ = layer.forward(x)
        return float(np.sum(out * upstream))

    dx, grads = layer.backward(upstream, cache)
    for name, param in layer.params.items():
        grad = grads[layer.full_name(name)]
        for index in [tuple(rng.integers(0, s) for s in param.shape) for _ in range(5)]:
            assert grad[index] == pytest.approx(_numeric_grad(objective, param, index), rel=1e-5, abs=1e-8)
    for index in [tuple(rng.integers(0, s) for s in x.shape) for _ in range(5)]:
        assert dx[index] == pytest.approx(_numeric_grad(objective, x, index), rel=1e-5, abs=1e-8)


def test_model_gradients_match_finite_differences(tiny_model64):
    model = tiny_model64
    rng = make_rng(2)
    noisy = rng.standard_normal((4, 16))
    clean = rng.standard_normal((4, 16))
    freq = rng.uniform(0.0, 1.0, size=4)
    weights = LossWeights(w_clean=0.7, w_freq=1.3)

    def objective():
        clean_hat, freq_hat, _ = forward_batch(model, noisy)
        return loss(clean_hat, clean, freq_hat, freq, weights)

    value, grads = backward(model, (noisy, clean, freq), weights)
    assert value == pytest.approx(objective())

    params = model.parameters()
    checked = 0
    for name in ("denoise.block1.conv.weight", "denoise.proj.bias", "regress.conv.weight",
                 "regress.dense1.weight", "regress.out.bias"):
        param = params[name]
        for _ in range(3):
            index = tuple(rng.integers(0, s) for s in param.shape)
            numeric = _numeric_grad(objective, param, index)
            assert grads[name][index] == pytest.approx(numeric, rel=1e-4, abs=1e-7)
            checked += 1
    assert checked == 15


def test_batch_of_identical_records_has_single_record_gradient(tiny_model64):
    rng = make_rng(5)
    noisy = rng.standard_normal((1, 16))
    clean = rng.standard_normal((1, 16))
    freq = np.array([0.45])

    _, single = backward(tiny_model64, (noisy, clean, freq))
    _, repeated = backward(tiny_model64, (np.repeat(noisy, 6, axis=0), np.repeat(clean, 6, axis=0), np.repeat(freq, 6)))
    assert single.keys() == repeated.keys()
    for name, grad in single.items():
        np.testing.assert_allclose(repeated[name], grad, rtol=1e-10, atol=1e-12)


def test_forward_shapes_and_single_window(tiny_model):
    noisy = np.random.default_rng(0).standard_normal((3, 50))
    clean_hat, freq, caches = forward_batch(tiny_model, noisy)
    assert clean_hat.shape == (3, 50)
    assert freq.shape == (3,)
    assert caches is None

    clean_window, freq_norm = forward(tiny_model, SignalWindow(noisy[0]))
    assert clean_window.n_samples == 50
    assert freq_norm == pytest.approx(float(freq[0]), rel=1e-6)


def test_forward_rejects_wrong_length(tiny_model):
    with pytest.raises(ShapeError):
        forward_batch(tiny_model, np.zeros((2, 40)))


def test_default_architecture_names():
    model = build_model()
    names = [layer.name for layer in model.layers]
    assert names[:2] == ["denoise.block1.conv", "denoise.block1.relu"]
    assert names[model.denoiser_depth - 1] == "denoise.proj"
    assert names[-1] == "regress.out"
    assert model.parameters()["regress.dense1.weight"].shape == (16 * 50, 64)
    assert model.dtype == np.float32


def test_loss_weights_validation():
    with pytest.raises(PreconditionError):
        LossWeights(w_clean=0.0, w_freq=0.0)
    with pytest.raises(PreconditionError):
        LossWeights(w_clean=-1.0)


def test_loss_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        loss(np.zeros((2, 5)), np.zeros((2, 4)), np.zeros(2), np.zeros(2))


def test_adam_minimizes_quadratic_bowl():
    # f(w) = w^2 из w = 1, lr = 0.1, параметры Adam по умолчанию
    params = {"w": np.array([1.0])}
    state = AdamState()
    for _ in range(100):
        adam_update(params, {"w": 2.0 * params["w"]}, state, lr=0.1)
    assert state.step == 100
    assert abs(params["w"][0]) < 1e-3


def test_adam_zero_gradient_keeps_parameters():
    params = {"w": np.array([0.5, -1.5])}
    state = AdamState()
    adam_update(params, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(params["w"], [0.5, -1.5])

    # после разгона нулевой градиент только гасит моменты
    adam_update(params, {"w": np.array([1.0, -2.0])}, state, lr=0.1)
    m_before = state.m["w"].copy()
    v_before = state.v["w"].copy()
    adam_update(params, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_allclose(state.m["w"], state.beta1 * m_before)
    np.testing.assert_allclose(state.v["w"], state.beta2 * v_before)


def test_adam_rejects_non_finite_gradient():
    params = {"x": np.zeros(2)}
    with pytest.raises(TrainingDivergenceError):
        adam_update(params, {"x": np.array([np.nan, 0.0])}, AdamState(), lr=0.1)


def test_optimizer_step_reduces_loss(tiny_model):
    rng = np.random.default_rng(4)
    noisy = rng.standard_normal((16, 50))
    clean = rng.standard_normal((16, 50))
    freq = rng.uniform(0.0, 1.0, size=16)
    state = AdamState()
    first, grads = backward(tiny_model, (noisy, clean, freq))
    for _ in range(20):
        _, grads = backward(tiny_model, (noisy, clean, freq))
        optimizer_step(tiny_model, grads, state, lr=1e-2)
    last, _ = backward(tiny_model, (noisy, clean, freq))
    assert last < first
