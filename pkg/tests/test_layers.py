import numpy as np
import pytest
from helpers import tie_free

from irdetect.engine import (Conv3x3, ConvTranspose2, LayerSpec, Linear,
                             MaxPool2, ReLU, Sigmoid, build_layer, check_layer)
from irdetect.errors import ShapeMismatchError


def naive_conv3x3(x, weight, bias):
    """Direct zero-padded 3x3 correlation, loops only."""
    n, c, h, w = x.shape
    o = weight.shape[0]
    out = np.zeros((n, o, h, w), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yy in range(h):
                for xx in range(w):
                    acc = 0.0
                    for ci in range(c):
                        for dy in range(3):
                            for dx in range(3):
                                sy, sx = yy + dy - 1, xx + dx - 1
                                if 0 <= sy < h and 0 <= sx < w:
                                    acc += x[ni, ci, sy, sx] * weight[oi, ci, dy, dx]
                    out[ni, oi, yy, xx] = acc + bias[oi]
    return out


def test_conv_identity_kernel_reproduces_input():
    layer = Conv3x3(1, 1)
    layer.params["weight"][...] = 0
    layer.params["weight"][0, 0, 1, 1] = 1.0
    layer.params["bias"][...] = 0
    x = np.random.default_rng(0).standard_normal((2, 1, 6, 8)).astype(np.float32)
    np.testing.assert_allclose(layer.forward(x), x, rtol=0, atol=0)


def test_conv_all_ones_kernel_on_ones_input():
    layer = Conv3x3(1, 1)
    layer.params["weight"][...] = 1.0
    layer.params["bias"][...] = 0
    x = np.ones((1, 1, 3, 3), dtype=np.float32)
    y = layer.forward(x)
    oracle = naive_conv3x3(x, layer.params["weight"], layer.params["bias"])
    np.testing.assert_allclose(y, oracle, atol=1e-6)
    assert y[0, 0, 1, 1] == 9.0
    for r, c in ((0, 0), (0, 2), (2, 0), (2, 2)):
        assert y[0, 0, r, c] == 4.0


def test_conv_matches_naive_oracle_on_random_input():
    rng = np.random.default_rng(7)
    layer = Conv3x3(3, 2, rng)
    x = rng.standard_normal((2, 3, 5, 6)).astype(np.float32)
    oracle = naive_conv3x3(x.astype(np.float64),
                           layer.params["weight"].astype(np.float64),
                           layer.params["bias"].astype(np.float64))
    np.testing.assert_allclose(layer.forward(x), oracle, rtol=1e-5, atol=1e-6)


def test_conv_preserves_spatial_dims():
    layer = Conv3x3(2, 5)
    y = layer.forward(np.zeros((1, 2, 24, 32), dtype=np.float32))
    assert y.shape == (1, 5, 24, 32)


def test_conv_shape_mismatch_names_layer():
    layer = Conv3x3(2, 5)
    with pytest.raises(ShapeMismatchError, match="conv3x3"):
        layer.forward(np.zeros((1, 3, 24, 32), dtype=np.float32))


def test_maxpool_two_by_two():
    layer = MaxPool2()
    x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)[None, None]
    assert layer.forward(x).tolist() == [[[[4.0]]]]


def test_maxpool_halves_and_convt_doubles_and_compose():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4, 12, 16)).astype(np.float32)
    pooled = MaxPool2().forward(x)
    assert pooled.shape == (2, 4, 6, 8)
    up = ConvTranspose2(4, 4, rng).forward(pooled)
    assert up.shape == x.shape


def test_maxpool_rejects_odd_dims():
    with pytest.raises(ShapeMismatchError, match="maxpool2"):
        MaxPool2().forward(np.zeros((1, 1, 3, 4), dtype=np.float32))


def test_relu_dead_unit_blocks_gradient():
    layer = ReLU()
    layer.forward(np.array([[-1.0]], dtype=np.float32))
    assert layer.backward(np.array([[5.0]], dtype=np.float32))[0, 0] == 0.0


def test_linear_weight_gradient_is_outer_product():
    rng = np.random.default_rng(5)
    layer = Linear(4, 3, rng)
    x = rng.standard_normal((1, 4)).astype(np.float32)
    upstream = rng.standard_normal((1, 3)).astype(np.float32)
    layer.forward(x)
    layer.backward(upstream)
    np.testing.assert_allclose(layer.grads["weight"], np.outer(upstream[0], x[0]),
                               rtol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_every_layer_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    smooth = lambda shape: rng.standard_normal(shape).astype(np.float32)
    kinked = lambda shape: tie_free(shape, rng)  # avoid argmax/ReLU kinks
    cases = [
        (Conv3x3(2, 3, rng), smooth((2, 2, 6, 8))),
        (MaxPool2(), kinked((2, 3, 6, 8))),
        (ConvTranspose2(3, 2, rng), smooth((2, 3, 3, 4))),
        (Linear(10, 4, rng), smooth((3, 10))),
        (ReLU(), kinked((2, 3, 6, 8))),
        (Sigmoid(), smooth((2, 3, 6, 8))),
    ]
    for layer, x in cases:
        err = check_layer(layer, x, epsilon=1e-3, seed=seed)
        assert err < 1e-3, f"{type(layer).__name__}: {err}"


def test_backward_rejects_wrong_gradient_shape():
    layer = Linear(4, 3)
    layer.forward(np.zeros((2, 4), dtype=np.float32))
    with pytest.raises(ShapeMismatchError, match="linear"):
        layer.backward(np.zeros((2, 5), dtype=np.float32))


def test_build_layer_covers_all_kinds():
    rng = np.random.default_rng(0)
    specs = [LayerSpec("conv3x3", 1, 2), LayerSpec("maxpool2"),
             LayerSpec("convT_stride2", 2, 1), LayerSpec("linear", 8, 2),
             LayerSpec("relu"), LayerSpec("sigmoid")]
    kinds = [type(build_layer(s, rng)).__name__ for s in specs]
    assert kinds == ["Conv3x3", "MaxPool2", "ConvTranspose2", "Linear",
                     "ReLU", "Sigmoid"]
    with pytest.raises(ValueError):
        LayerSpec("conv5x5")
