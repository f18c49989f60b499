"""Analytic backward passes against float64 central differences."""
import numpy as np
import pytest

from oracles import numeric_grad, rel_error
from tobias.errors import StateError
from tobias.net.builder import build_network
from tobias.net.spec import ArchSpec, StageSpec, StemSpec
from tobias.ssl.losses import contrastive_loss, contrastive_loss_and_grad
from tobias.tensor.layers import (Activation, BatchNorm2d, Conv2d, GlobalAvgPool, L2Normalize,
                                  Linear, MaxPool2d, Residual, Sequential)

TOL = 1e-4


def check_layer(layer, x, rng):
    """Compare input and parameter gradients of ``sum(layer(x) * r)``."""
    r = rng.standard_normal(layer.forward(x, record=False).shape)

    def f():
        return float((layer.forward(x, record=False) * r).sum())

    layer.forward(x, record=True)
    dx = layer.backward(r)
    errors = {"x": rel_error(dx, numeric_grad(f, x))}
    grads = dict(layer.named_grads())
    for name, p in layer.named_parameters():
        errors[name] = rel_error(grads.get(name, np.zeros_like(p)), numeric_grad(f, p))
    return errors


def assert_small(errors):
    worst = max(errors, key=errors.get)
    assert errors[worst] <= TOL, f"{worst}: relative error {errors[worst]:.2e}"


def conv_layer(rng, cin=2, cout=3, k=3, stride=1, padding=1, bias=True):
    w = rng.standard_normal((cout, cin, k, k))
    return Conv2d(w, rng.standard_normal(cout) if bias else None, stride, padding)


@pytest.mark.parametrize("k,stride,padding", [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0), (1, 2, 0)])
def test_conv_grad(rng, k, stride, padding):
    x = rng.standard_normal((2, 2, 5, 6))
    assert_small(check_layer(conv_layer(rng, k=k, stride=stride, padding=padding), x, rng))


@pytest.mark.parametrize("k,s,p,ceil", [(2, 2, 0, False), (3, 2, 1, False), (2, 2, 0, True), (3, 1, 1, False)])
def test_maxpool_grad(rng, k, s, p, ceil):
    x = rng.standard_normal((2, 2, 7, 7))
    assert_small(check_layer(MaxPool2d(k, s, p, ceil), x, rng))


def test_gap_grad(rng):
    assert_small(check_layer(GlobalAvgPool(), rng.standard_normal((2, 3, 4, 5)), rng))


@pytest.mark.parametrize("mode", ["batch", "running"])
def test_batchnorm_grad(rng, mode):
    bn = BatchNorm2d(3, mode=mode, dtype=np.float64)
    bn.params["gamma"] = rng.standard_normal(3)
    bn.params["beta"] = rng.standard_normal(3)
    bn.running_mean = rng.standard_normal(3)
    bn.running_var = rng.uniform(0.5, 2.0, 3)
    bn.momentum = 0.0  # keep running statistics fixed across the probes
    assert_small(check_layer(bn, rng.standard_normal((3, 3, 4, 4)), rng))


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "arctan", "elu", "selu", "softplus"])
def test_activation_grad(rng, kind):
    x = rng.standard_normal((2, 3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5  # stay away from the kinks
    assert_small(check_layer(Activation(kind), x, rng))


def test_linear_and_l2norm_grad(rng):
    seq = Sequential([Linear(rng.standard_normal((4, 6)), rng.standard_normal(4)), L2Normalize()])
    assert_small(check_layer(seq, rng.standard_normal((5, 6)), rng))


@pytest.mark.parametrize("use_skip", [True, False])
def test_residual_grad(rng, use_skip):
    main = Sequential([conv_layer(rng, 2, 2), Activation("elu"), conv_layer(rng, 2, 2)])
    short = Sequential([conv_layer(rng, 2, 2, k=1, padding=0)])
    block = Residual(main, short, "softplus", use_skip)
    assert_small(check_layer(block, rng.standard_normal((2, 2, 5, 5)), rng))


def test_small_network_grad(rng):
    spec = ArchSpec(name="probe", stem=StemSpec(4, 3, 1), activation="softplus",
                    stages=(StageSpec("bottleneck", 1, 8, True), StageSpec("plain", 1, 4, True)),
                    input_size=8, num_classes=3)
    net = build_network(spec, 0, dtype=np.float64)
    assert_small(check_layer(net, rng.standard_normal((2, 3, 8, 8)), rng))


@pytest.mark.parametrize("n", [2, 4, 8])
@pytest.mark.parametrize("d", [2, 8])
@pytest.mark.parametrize("reduction", ["sum", "mean"])
def test_contrastive_loss_grad(rng, n, d, reduction):
    z1 = rng.standard_normal((n, d)) * 0.5
    z2 = rng.standard_normal((n, d)) * 0.5
    _, d1, d2 = contrastive_loss_and_grad(z1, z2, 0.2, reduction)
    f = lambda: contrastive_loss(z1, z2, 0.2, reduction)  # noqa: E731
    assert rel_error(d1, numeric_grad(f, z1)) <= TOL
    assert rel_error(d2, numeric_grad(f, z2)) <= TOL


def test_backward_without_forward_raises():
    with pytest.raises(StateError):
        Activation("relu").backward(np.zeros(3))
    layer = GlobalAvgPool()
    layer.forward(np.zeros((1, 1, 2, 2)), record=False)
    with pytest.raises(StateError):
        layer.backward(np.zeros((1, 1)))
