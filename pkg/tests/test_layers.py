import numpy as np
import pytest
from scipy import ndimage

from oaqsm import gradcheck
from oaqsm.nn import layers


def test_conv3d_matches_scipy_correlate(gen):
    x = gen.normal(size=(2, 3, 6, 5, 4))
    w = gen.normal(size=(4, 3, 3, 3, 3))
    b = gen.normal(size=4)
    y, _ = layers.conv3d_forward(x, w, b)
    ref = np.zeros_like(y)
    for n in range(2):
        for o in range(4):
            ref[n, o] = b[o] + sum(ndimage.correlate(x[n, c], w[o, c], mode="constant")
                                   for c in range(3))
    assert np.abs(y - ref).max() < 1e-12


def test_delta_kernel_is_identity(gen):
    x = gen.normal(size=(1, 2, 4, 4, 4))
    w = np.zeros((2, 2, 3, 3, 3))
    w[0, 0, 1, 1, 1] = w[1, 1, 1, 1, 1] = 1
    y, _ = layers.conv3d_forward(x, w, np.zeros(2))
    assert np.array_equal(y, x)


def test_conv_transpose_loop_oracle(gen):
    x = gen.normal(size=(1, 2, 2, 3, 2))
    w = gen.normal(size=(2, 3, 2, 2, 2))
    b = gen.normal(size=3)
    y, _ = layers.conv_transpose_forward(x, w, b)
    ref = np.zeros((1, 3, 4, 6, 4)) + b[None, :, None, None, None]
    for c in range(2):
        for i, j, k in np.ndindex(2, 3, 2):
            for a, bb, cc in np.ndindex(2, 2, 2):
                ref[0, :, 2 * i + a, 2 * j + bb, 2 * k + cc] += x[0, c, i, j, k] * w[c, :, a, bb, cc]
    assert np.abs(y - ref).max() < 1e-12


def test_maxpool_constant_and_values(gen):
    y, _ = layers.maxpool_forward(np.full((1, 2, 4, 6, 2), 1.5))
    assert y.shape == (1, 2, 2, 3, 1) and np.all(y == 1.5)
    x = gen.normal(size=(1, 1, 4, 4, 4))
    y, _ = layers.maxpool_forward(x)
    assert y[0, 0, 1, 0, 1] == x[0, 0, 2:4, 0:2, 2:4].max()
    with pytest.raises(ValueError):
        layers.maxpool_forward(np.zeros((1, 1, 3, 4, 4)))


def test_silu_values():
    assert layers.silu(np.array(0.0)) == 0.0
    assert layers.silu(np.array(1.0)) == pytest.approx(1 / (1 + np.exp(-1)), abs=1e-15)
    assert layers.silu(np.array(1.0)) == pytest.approx(0.7311, abs=1e-4)


def test_depthwise_impulse_all_ones():
    h = np.zeros((1, 2, 5, 5, 5))
    h[0, :, 0, 2, 2] = 1.0
    hs, _ = layers.depthwise_shared_forward(h, np.ones((1, 3, 3, 3)))
    ref = np.zeros((5, 5, 5))
    ref[0:2, 1:4, 1:4] = 1.0
    assert np.array_equal(hs[0, 0], ref) and np.array_equal(hs[0, 1], ref)


def test_shape_errors():
    with pytest.raises(ValueError):
        layers.conv3d_forward(np.zeros((1, 2, 4, 4, 4)), np.zeros((1, 3, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        layers.conv3d_forward(np.zeros((2, 4, 4, 4)), np.zeros((1, 2, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        layers.add_forward(np.zeros((1, 2)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        layers.linear_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))
    with pytest.raises(ValueError):
        layers.depthwise_shared_forward(np.zeros((1, 1, 3, 3, 3)), np.zeros((2, 3, 3, 3)))


@pytest.mark.parametrize("result", gradcheck.check_layers(0), ids=lambda r: r.name)
def test_layer_gradients(result):
    assert result.error <= 1e-5


def test_mlp_and_lot_gradients():
    for r in gradcheck.check_mlp(1) + gradcheck.check_lot(1):
        assert r.error <= 1e-5, r
