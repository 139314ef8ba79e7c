"""
基础数值运算测试
"""

import numpy as np
import pytest

from spamlab.core.exceptions import DimensionMismatch, ShapeError
from spamlab.core.numerics import (
    as_feature_map,
    channel_layer_norm_backward,
    channel_layer_norm_forward,
    dft2,
    dft2_direct,
    gelu,
    gelu_grad,
    hermitian_mirror,
    idft2,
    pointwise_linear,
    pointwise_linear_backward,
    sigmoid,
    softmax_rows,
    softmax_rows_backward,
    spatial_norm,
    spatial_norm_backward,
    spatial_norm_forward,
)


def _central(fn, x, h=1e-6):
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = fn()
        flat[i] = orig - h
        minus = fn()
        flat[i] = orig
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    return grad


class TestActivations:

    def test_gelu_known_values(self):
        np.testing.assert_allclose(gelu(np.array([0.0])), [0.0])
        np.testing.assert_allclose(gelu(np.array([1.0])), [0.8413447460685429], rtol=1e-12)

    def test_gelu_grad_matches_difference(self):
        x = np.linspace(-4, 4, 41)
        numeric = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6
        np.testing.assert_allclose(gelu_grad(x), numeric, atol=1e-8)

    def test_sigmoid_is_stable_for_large_inputs(self):
        s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose(s, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(s))


class TestSoftmax:

    def test_rows_sum_to_one(self, np_rng):
        p = softmax_rows(np_rng.normal(size=(5, 7)) * 50)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p >= 0)

    def test_row_shift_invariance(self, np_rng):
        scores = np_rng.normal(size=(4, 6))
        shifts = np.array([[0.0], [1e3], [-40.0], [7.5]])
        np.testing.assert_allclose(softmax_rows(scores + shifts), softmax_rows(scores), atol=1e-12)

    def test_backward_matches_difference(self, np_rng):
        scores = np_rng.normal(size=(3, 4))
        g = np_rng.normal(size=(3, 4))
        analytic = softmax_rows_backward(softmax_rows(scores), g)
        numeric = _central(lambda: float(np.sum(g * softmax_rows(scores))), scores)
        np.testing.assert_allclose(analytic, numeric, atol=1e-8)


class TestSpatialNorm:

    def test_output_is_standardized(self, np_rng):
        x = np_rng.normal(3.0, 2.0, size=(4, 5, 5))
        out = spatial_norm(x, np.ones(4), eps=1e-12)
        assert abs(out.mean()) < 1e-12
        assert abs(out.var() - 1.0) < 1e-9

    def test_constant_input_gives_zero(self):
        out = spatial_norm(np.full((3, 4, 4), 2.5), np.ones(3))
        np.testing.assert_array_equal(out, 0.0)

    def test_requires_two_elements(self):
        with pytest.raises(ShapeError):
            spatial_norm(np.ones((1, 1, 1)), np.ones(1))

    def test_gain_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            spatial_norm(np.ones((3, 2, 2)), np.ones(2))

    def test_backward_matches_difference(self, np_rng):
        x = np_rng.normal(size=(3, 3, 3))
        gain = np_rng.normal(size=3)
        bias = np_rng.normal(size=3)
        g = np_rng.normal(size=x.shape)
        _, cache = spatial_norm_forward(x, gain, 1e-6, bias)
        dx, dgain, dbias = spatial_norm_backward(cache, g)

        loss = lambda: float(np.sum(g * spatial_norm(x, gain, 1e-6, bias)))  # noqa: E731
        np.testing.assert_allclose(dx, _central(loss, x), atol=1e-7)
        np.testing.assert_allclose(dgain, _central(loss, gain), atol=1e-7)
        np.testing.assert_allclose(dbias, g.sum(axis=(1, 2)), atol=1e-12)


class TestChannelLayerNorm:

    def test_backward_matches_difference(self, np_rng):
        x = np_rng.normal(size=(4, 2, 3))
        gain = np_rng.normal(size=4)
        g = np_rng.normal(size=x.shape)
        _, cache = channel_layer_norm_forward(x, gain)
        dx, dgain, dbias = channel_layer_norm_backward(cache, g)
        assert dbias is None

        loss = lambda: float(np.sum(g * channel_layer_norm_forward(x, gain)[0]))  # noqa: E731
        np.testing.assert_allclose(dx, _central(loss, x), atol=1e-7)
        np.testing.assert_allclose(dgain, _central(loss, gain), atol=1e-7)


class TestFourier:

    @pytest.mark.parametrize("shape", [(1, 1), (3, 5), (4, 4), (7, 2)])
    def test_fft_matches_direct_sum(self, np_rng, shape):
        x = np_rng.normal(size=shape)
        np.testing.assert_allclose(dft2(x), dft2_direct(x), atol=1e-10)

    def test_inverse_roundtrip(self, np_rng):
        x = np_rng.normal(size=(2, 6, 5))
        np.testing.assert_allclose(idft2(dft2(x)).real, x, atol=1e-12)

    def test_real_input_is_hermitian(self, np_rng):
        x_hat = dft2(np_rng.normal(size=(5, 6)))
        np.testing.assert_allclose(hermitian_mirror(x_hat), np.conj(x_hat), atol=1e-10)

    def test_rejects_empty_axes(self):
        with pytest.raises(ShapeError):
            dft2(np.zeros((0, 3)))


class TestPointwiseLinear:

    def test_channel_mismatch(self):
        with pytest.raises(DimensionMismatch):
            pointwise_linear(np.ones((2, 3)), np.ones((4, 2, 2)))

    def test_backward(self, np_rng):
        w = np_rng.normal(size=(3, 2))
        x = np_rng.normal(size=(2, 3, 3))
        b = np_rng.normal(size=3)
        g = np_rng.normal(size=(3, 3, 3))
        dx, dw, db = pointwise_linear_backward(w, x, g, has_bias=True)
        loss = lambda: float(np.sum(g * pointwise_linear(w, x, b)))  # noqa: E731
        np.testing.assert_allclose(dx, _central(loss, x), atol=1e-7)
        np.testing.assert_allclose(dw, _central(loss, w), atol=1e-7)
        np.testing.assert_allclose(db, _central(loss, b), atol=1e-7)


class TestFeatureMap:

    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeError):
            as_feature_map(np.ones((2, 2)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            as_feature_map(np.array([[[np.nan]]]))
