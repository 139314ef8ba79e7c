"""
SPAM 混合器测试
"""

import numpy as np
import pytest

from spamlab.core.exceptions import DimensionMismatch, ShapeError
from spamlab.core.rng import Rng
from spamlab.core.verification_manager import spam_gradcheck
from spamlab.models import gradcheck
from spamlab.models.spam import (
    KERNEL_SIZES,
    SpamParams,
    SrfMask,
    context_aggregation,
    init_spam_params,
    sag_head,
    spam_backward,
    spam_forward,
    srf,
    srf_backward,
    srf_forward,
    srf_imag_residual,
    value_projection,
)
from spamlab.spectral.conv_support import depthwise_conv


class TestSrfMask:

    def test_uniform_value(self):
        mask = SrfMask.uniform(3, 4, 4, 0.25)
        np.testing.assert_allclose(mask.psi, 0.25)
        assert mask.logits.shape == (3, 4, 4)

    def test_single_mode_shape(self):
        assert SrfMask.uniform(3, 4, 4, 0.5, "single").logits.shape == (1, 4, 4)
        with pytest.raises(ShapeError):
            SrfMask(np.zeros((2, 4, 4)), "single")

    def test_uniform_range(self):
        with pytest.raises(ValueError):
            SrfMask.uniform(1, 2, 2, 1.0)


class TestSrf:

    @pytest.mark.parametrize("mode", ["depthwise", "single"])
    def test_uniform_mask_scales(self, rng, mode):
        x = rng.normal((3, 5, 6))
        np.testing.assert_allclose(srf(x, SrfMask.uniform(3, 5, 6, 0.3, mode)), 0.3 * x, atol=1e-10)

    def test_saturated_mask_passes_through(self, rng):
        x = rng.normal((2, 4, 4))
        np.testing.assert_allclose(srf(x, SrfMask(np.full((2, 4, 4), 20.0))), x, atol=1e-6)

    def test_removing_dc_gives_zero_mean(self, rng):
        x = rng.normal((2, 6, 6)) + 3.0
        logits = rng.split("logits").uniform((2, 6, 6), -3, 3)
        logits[:, 0, 0] = -np.inf
        out = srf(x, SrfMask(logits))
        np.testing.assert_allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-10)

    def test_imaginary_residual_reported(self, rng):
        x = rng.normal((1, 4, 5))
        residual = srf_imag_residual(x, SrfMask(rng.split("m").normal((1, 4, 5))))
        assert residual >= 0.0

    def test_mask_size_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            srf(rng.normal((2, 4, 4)), SrfMask(np.zeros((2, 5, 5))))

    @pytest.mark.parametrize("mode,depth", [("depthwise", 3), ("single", 1)])
    def test_backward_matches_difference(self, rng, mode, depth):
        x = rng.normal((3, 4, 5))
        mask = SrfMask(rng.split("logits").uniform((depth, 4, 5), -3, 3), mode)
        weights = rng.split("g").normal((3, 4, 5))
        _, cache = srf_forward(x, mask)
        dx, dlogits = srf_backward(cache, weights)
        loss = gradcheck.projection_loss(weights, lambda: srf(x, mask))
        report = gradcheck.check(loss, {'x': dx, 'logits': dlogits}, {'x': x, 'logits': mask.logits})
        assert report.passed, report.errors


class TestSpamForward:

    def test_shape_preserved(self, rng):
        params = init_spam_params(8, 6, 6, rng)
        x = rng.split("x").normal((8, 6, 6))
        assert spam_forward(x, params).shape == (8, 6, 6)
        assert value_projection(x, params).shape == (8, 6, 6)
        assert context_aggregation(x, params).shape == (8, 6, 6)

    def test_is_value_times_context(self, rng):
        params = init_spam_params(4, 4, 4, rng, biases=True)
        x = rng.split("x").normal((4, 4, 4))
        expected = np.einsum('oi,ihw->ohw', params.out_weight,
                             value_projection(x, params) * context_aggregation(x, params))
        expected += params.out_bias[:, None, None]
        np.testing.assert_allclose(spam_forward(x, params), expected, atol=1e-12)

    def test_sag_head_without_mask(self, rng):
        x = rng.normal((2, 5, 5))
        kernel = rng.split("k").normal((2, 3, 3))
        exp_weight = rng.split("e").normal((4, 2))
        out = sag_head(x, kernel, None, exp_weight)
        expected = np.einsum('oi,ihw->ohw', exp_weight, depthwise_conv(x, kernel))
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_channel_count_must_divide(self, rng):
        with pytest.raises(DimensionMismatch):
            init_spam_params(6, 4, 4, rng)

    def test_input_channel_mismatch(self, rng):
        params = init_spam_params(4, 4, 4, rng)
        with pytest.raises(DimensionMismatch):
            spam_forward(np.ones((8, 4, 4)), params)

    def test_non_finite_input(self, rng):
        params = init_spam_params(4, 4, 4, rng)
        x = np.ones((4, 4, 4))
        x[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            spam_forward(x, params)


class TestSpamParams:

    def test_named_tensors(self, rng):
        params = init_spam_params(8, 4, 4, rng)
        names = params.named_tensors()
        assert names['heads.3.conv.weight'].shape == (2, KERNEL_SIZES[3], KERNEL_SIZES[3])
        assert names['heads.0.srf.logits'].shape == (2, 4, 4)
        assert names['norm.weight'].shape == (16,)
        assert not any(name.endswith('bias') for name in names)

    def test_modes_and_biases(self, rng):
        assert init_spam_params(4, 4, 4, rng, "single").srf_mode == "single"
        none = init_spam_params(4, 4, 4, rng, "none")
        assert none.srf_mode == "none"
        assert not any('srf' in name for name in none.named_tensors())
        assert init_spam_params(4, 4, 4, rng, biases=True).has_bias

    def test_from_named_shares_arrays(self, rng):
        params = init_spam_params(4, 4, 4, rng, biases=True)
        tensors = params.named_tensors()
        rebuilt = SpamParams.from_named(tensors)
        assert rebuilt.heads[1].mask.logits is tensors['heads.1.srf.logits']
        assert rebuilt.value_weight is tensors['value.weight']
        np.testing.assert_array_equal(spam_forward(np.ones((4, 4, 4)), rebuilt),
                                      spam_forward(np.ones((4, 4, 4)), params))


class TestSpamGradients:

    @pytest.mark.parametrize("mode,biases", [("depthwise", False), ("single", False),
                                             ("none", False), ("depthwise", True)])
    def test_gradcheck(self, mode, biases):
        report = spam_gradcheck(Rng(11).split(mode), srf_mode=mode, biases=biases)
        assert report.passed, report.errors
        assert 'input' in report.errors
        assert ('heads.0.srf.logits' in report.errors) == (mode != "none")

    def test_backward_keys_match_parameters(self, rng):
        params = init_spam_params(4, 4, 4, rng, biases=True)
        x = rng.split("x").normal((4, 4, 4))
        dx, grads = spam_backward(x, params, np.ones((4, 4, 4)))
        assert dx.shape == x.shape
        assert list(grads) == list(params.named_tensors())
        for name, tensor in params.named_tensors().items():
            assert grads[name].shape == tensor.shape

    def test_grad_shape_mismatch(self, rng):
        params = init_spam_params(4, 4, 4, rng)
        with pytest.raises(DimensionMismatch):
            spam_backward(np.ones((4, 4, 4)), params, np.ones((4, 4, 5)))
