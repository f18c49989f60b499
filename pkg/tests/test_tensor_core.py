import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tobias.errors import ConfigError, DimensionError
from tobias.tensor import kernels as K
from tobias.tensor.init import InitScheme, fans, init_weights
from tobias.tensor.layers import Activation, Linear
from tobias.tensor.rng import RngState, as_rng


def test_same_seed_same_draws():
    a, b = RngState(7), RngState(7)
    np.testing.assert_array_equal(a.normal(size=100), b.normal(size=100))
    assert not np.array_equal(RngState(8).normal(size=100), RngState(7).normal(size=100))


def test_named_streams_ignore_parent_consumption():
    root = RngState(3)
    first = root.stream("layer").random(5)
    root.random(1000)
    np.testing.assert_array_equal(root.stream("layer").random(5), first)
    assert not np.array_equal(root.stream("other").random(5), first)


def test_rng_state_round_trip():
    r = RngState(11).stream("x")
    r.random(17)
    saved = r.get_state()
    expected = r.random(10)
    np.testing.assert_array_equal(RngState.from_state(saved).random(10), expected)


def test_as_rng_accepts_ints():
    assert isinstance(as_rng(5), RngState)
    r = RngState(1)
    assert as_rng(r) is r


def test_init_same_seed_identical():
    w1 = init_weights((8, 4, 3, 3), "kaiming_normal", RngState(0))
    w2 = init_weights((8, 4, 3, 3), "kaiming_normal", RngState(0))
    np.testing.assert_array_equal(w1, w2)


def test_kaiming_variance():
    w = init_weights((2000, 512), InitScheme.KAIMING_NORMAL, RngState(0), dtype=np.float64)
    assert fans(w.shape)[0] == 512
    assert abs(w.var() / (2 / 512) - 1) < 0.05


def test_xavier_bound_and_uniform_range():
    w = init_weights((64, 32, 3, 3), "xavier", RngState(0))
    fi, fo = fans(w.shape)
    assert np.abs(w).max() <= np.sqrt(6 / (fi + fo))
    u = init_weights((100, 100), "uniform", RngState(0))
    assert u.min() >= -0.1 and u.max() <= 0.1


def test_unknown_init_scheme():
    with pytest.raises(ConfigError):
        init_weights((2, 2), "orthogonal", RngState(0))


def test_conv_identity_kernel():
    x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    np.testing.assert_array_equal(K.conv2d_forward(x, np.ones((1, 1, 1, 1), np.float32)), x)


def test_conv_zero_input_gives_bias():
    y = K.conv2d_forward(np.zeros((1, 2, 5, 5), np.float32), np.ones((3, 2, 3, 3), np.float32),
                         np.array([1, -2, 3], np.float32), 1, 1)
    for c, b in enumerate([1, -2, 3]):
        assert np.all(y[0, c] == b)


def test_pool_constant_and_gap_examples():
    x = np.full((1, 2, 5, 5), 3.0)
    np.testing.assert_array_equal(K.maxpool2d(x, 2, 2, 0, True), np.full((1, 2, 3, 3), 3.0))
    np.testing.assert_array_equal(K.global_avg_pool(np.array([[[[1.0, 2], [3, 4]]]])), [[[[2.5]]]])
    np.testing.assert_array_equal(K.global_avg_pool(np.zeros((1, 1, 3, 3))), 0)


def test_pool_empty_output_raises():
    with pytest.raises(DimensionError):
        K.maxpool2d(np.zeros((1, 1, 1, 1)), 3, 2)


def test_batchnorm_constant_input_and_mismatch():
    y = K.batchnorm_inference(np.full((2, 3, 4, 4), 5.0), np.ones(3), np.zeros(3), 1e-5)
    np.testing.assert_allclose(y, 0, atol=1e-6)
    with pytest.raises(DimensionError):
        K.batchnorm_inference(np.zeros((1, 3, 2, 2)), np.ones(4), np.zeros(4))


def test_bounded_and_unbounded_activations():
    x = np.linspace(-50, 50, 1001)
    for kind in ("relu", "elu", "selu", "softplus"):
        assert K.activate(x, kind).max() > 40
    assert np.all(np.abs(K.activate(x, "sigmoid")) <= 1)
    assert np.all(np.abs(K.activate(x, "arctan")) <= np.pi / 2)


def test_relu_backward_masks_negative_inputs():
    layer = Activation("relu")
    layer.forward(np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(layer.backward(np.array([5.0, 7.0])), [0.0, 7.0])


def test_identity_linear_passes_gradient():
    layer = Linear(np.eye(4))
    layer.forward(np.ones((2, 4)))
    g = np.arange(8.0).reshape(2, 4)
    np.testing.assert_array_equal(layer.backward(g), g)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(3, 9), st.integers(1, 3), st.integers(1, 2),
       st.integers(0, 1), st.integers(0, 2**31 - 1))
def test_conv_outputs_are_finite(n, c, size, k, s, p, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, c, size, size)).astype(np.float32)
    w = r.standard_normal((2, c, k, k)).astype(np.float32)
    y = K.conv2d_forward(x, w, None, s, p)
    assert y.shape == (n, 2, K.conv_output_size(size, k, s, p), K.conv_output_size(size, k, s, p))
    assert np.isfinite(y).all()
