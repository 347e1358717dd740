"""
Tests for the tensor kernels and layers
=======================================

Forward contracts of every kernel HrSegNet uses, the conv/transposed-conv
adjoint relation, batch-norm statistics and the SGD update.
"""

import math

import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import DataError, NumericError, ShapeError, StateError
from app.nn import functional as F
from app.nn.layers import (
    Activation,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Fuse,
    MacCounter,
    Resize,
)
from app.nn.optim import sgd_momentum_step
from app.nn.tensor import (
    BatchNormState,
    ConvParams,
    conv_output_size,
    conv_transpose_output_size,
)


def naive_conv(x, weight, bias, stride, padding):
    """Direct cross-correlation loop used as an oracle."""
    n, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, out_h, out_w))
    for b in range(n):
        for o in range(c_out):
            for i in range(out_h):
                for j in range(out_w):
                    patch = xp[b, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, o, i, j] = np.sum(patch * weight[o])
            if bias is not None:
                out[b, o] += bias[o]
    return out


def naive_bilinear(x, out_h, out_w):
    """Per-pixel half-pixel-center interpolation with border clamping."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        wy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            wx = sx - x0
            out[:, :, i, j] = (
                (1 - wy) * (1 - wx) * x[:, :, y0, x0]
                + (1 - wy) * wx * x[:, :, y0, x1]
                + wy * (1 - wx) * x[:, :, y1, x0]
                + wy * wx * x[:, :, y1, x1]
            )
    return out


# =============================================================================
# Convolution
# =============================================================================


class TestConv2d:
    def test_identity_kernel(self):
        x = np.ones((1, 1, 3, 3))
        out = F.conv2d_forward(x, ConvParams(weight=np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out, x)

    def test_all_ones_kernel_counts_window(self):
        x = np.ones((1, 1, 3, 3))
        out = F.conv2d_forward(x, ConvParams(weight=np.ones((1, 1, 3, 3)), padding=1))
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=float)
        np.testing.assert_array_equal(out[0, 0], expected)

    def test_stem_halves_input(self):
        x = np.zeros((1, 3, 400, 400), dtype=np.float32)
        weight = np.zeros((4, 3, 3, 3), dtype=np.float32)
        out = F.conv2d_forward(x, ConvParams(weight=weight, stride=2, padding=1))
        assert out.shape == (1, 4, 200, 200)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_loop_oracle(self, rng, stride, padding):
        x = rng.standard_normal((2, 3, 7, 6))
        weight = rng.standard_normal((4, 3, 3, 3))
        bias = rng.standard_normal(4)
        p = ConvParams(weight=weight, bias=bias, stride=stride, padding=padding)
        np.testing.assert_allclose(
            F.conv2d_forward(x, p), naive_conv(x, weight, bias, stride, padding), atol=1e-12
        )

    def test_shape_algebra(self, rng):
        for _ in range(50):
            h, w = rng.integers(3, 13, size=2)
            k = int(rng.choice([1, 3]))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 2))
            x = np.zeros((1, 2, h, w))
            p = ConvParams(weight=np.zeros((3, 2, k, k)), stride=stride, padding=padding)
            out = F.conv2d_forward(x, p)
            assert out.shape == (
                1,
                3,
                (h + 2 * padding - k) // stride + 1,
                (w + 2 * padding - k) // stride + 1,
            )

    def test_odd_input_halves_by_floor(self):
        assert conv_output_size(25, 3, 2, 1) == 13

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="input channels"):
            F.conv2d_forward(np.zeros((1, 2, 4, 4)), ConvParams(weight=np.zeros((1, 3, 3, 3))))

    def test_empty_output(self):
        with pytest.raises(ShapeError, match="empty"):
            F.conv2d_forward(np.zeros((1, 1, 2, 2)), ConvParams(weight=np.zeros((1, 1, 3, 3))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError, match="odd"):
            ConvParams(weight=np.zeros((1, 1, 2, 2)))


# =============================================================================
# Transposed convolution
# =============================================================================


class TestConvTranspose2d:
    def test_head_upsample_doubles(self):
        x = np.zeros((1, 4, 100, 100), dtype=np.float32)
        p = ConvParams(weight=np.zeros((4, 4, 3, 3), dtype=np.float32), stride=2, padding=1)
        assert F.conv2d_transpose_forward(x, p, output_padding=1).shape == (1, 4, 200, 200)

    def test_unit_identity(self):
        p = ConvParams(weight=np.ones((1, 1, 1, 1)))
        out = F.conv2d_transpose_forward(np.ones((1, 1, 1, 1)), p)
        np.testing.assert_array_equal(out, [[[[1.0]]]])

    @pytest.mark.parametrize("stride,output_padding,size", [(1, 0, 4), (2, 1, 8)])
    def test_equals_conv_input_gradient(self, rng, stride, output_padding, size):
        weight = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
        p = ConvParams(weight=weight, stride=stride, padding=1)
        upstream = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        conv_input = np.zeros((1, 3, size, size), dtype=np.float32)
        d_x, _, _ = F.conv2d_backward(conv_input, p, upstream)
        out = F.conv2d_transpose_forward(upstream, p, output_padding)
        np.testing.assert_allclose(out, d_x, atol=1e-6)

    def test_adjoint_inner_product(self, rng):
        weight = rng.standard_normal((3, 2, 3, 3))
        p = ConvParams(weight=weight, stride=2, padding=1)
        x = rng.standard_normal((2, 2, 8, 8))
        y = rng.standard_normal((2, 3, 4, 4))
        lhs = np.sum(F.conv2d_forward(x, p) * y)
        rhs = np.sum(x * F.conv2d_transpose_forward(y, p, output_padding=1))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_output_padding_must_be_below_stride(self):
        with pytest.raises(ShapeError, match="output_padding"):
            conv_transpose_output_size(4, 3, 2, 1, 2)


# =============================================================================
# Batch normalization
# =============================================================================


class TestBatchNorm:
    def test_standardized_input_is_fixed_point(self, rng):
        x = rng.standard_normal((4, 3, 5, 5))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        out = F.batchnorm_forward(x, BatchNormState.create(3, np.float64), "train")
        np.testing.assert_allclose(out, x, atol=1e-3)

    def test_constant_input_gives_beta(self):
        state = BatchNormState.create(3, np.float64)
        state.beta[...] = 0.5
        out = F.batchnorm_forward(np.full((2, 3, 4, 4), 3.0), state, "train")
        np.testing.assert_allclose(out, 0.5, atol=1e-5)

    def test_infer_uses_running_stats(self):
        state = BatchNormState.create(1, np.float64)
        state.gamma[...] = 2.0
        state.beta[...] = 1.0
        out = F.batchnorm_forward(np.full((1, 1, 1, 1), 0.5), state, "infer")
        assert out.item() == pytest.approx(2.0, abs=1e-4)

    def test_running_stat_update(self, rng):
        x = rng.standard_normal((2, 3, 4, 4)) * 2.0 + 1.0
        state = BatchNormState.create(3, np.float64)
        F.batchnorm_forward(x, state, "train")
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))

    def test_infer_is_pure(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        state = BatchNormState.create(3, np.float64)
        state.running_mean[...] = [0.1, -0.2, 0.3]
        before = state.running_mean.copy(), state.running_var.copy()
        first = F.batchnorm_forward(x, state, "infer")
        second = F.batchnorm_forward(x, state, "infer")
        np.testing.assert_array_equal(first, second)
        np.testing.assert_array_equal(state.running_mean, before[0])
        np.testing.assert_array_equal(state.running_var, before[1])

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            F.batchnorm_forward(np.zeros((1, 2, 2, 2)), BatchNormState.create(3), "train")


# =============================================================================
# Activations, resize, fusion
# =============================================================================


class TestActivation:
    def test_relu(self):
        np.testing.assert_array_equal(F.activation(np.array([-1.0, 0.0, 2.0]), "relu"), [0, 0, 2])

    def test_sigmoid_values(self):
        assert F.activation(np.array([0.0]), "sigmoid")[0] == pytest.approx(0.5)
        assert F.activation(np.array([math.log(3.0)]), "sigmoid")[0] == pytest.approx(0.75)

    def test_sigmoid_saturates_without_overflow(self):
        with np.errstate(over="raise"):
            out = F.activation(np.array([-1000.0, 1000.0]), "sigmoid")
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_relu_is_identity_on_non_negative(self, rng):
        x = np.abs(rng.standard_normal((1, 2, 3, 3)))
        np.testing.assert_array_equal(F.activation(x, "relu"), x)


class TestBilinearResize:
    def test_same_size_is_exact_copy(self, rng):
        x = rng.standard_normal((1, 2, 5, 7))
        out = F.bilinear_resize(x, 5, 7)
        np.testing.assert_array_equal(out, x)
        assert out is not x

    def test_constant_stays_constant(self):
        out = F.bilinear_resize(np.full((1, 1, 3, 5), 2.5), 11, 4)
        np.testing.assert_allclose(out, 2.5, rtol=1e-12)

    def test_half_pixel_row(self):
        out = F.bilinear_resize(np.array([[[[0.0, 1.0]]]]), 1, 4)
        np.testing.assert_allclose(out[0, 0, 0], [0.0, 0.25, 0.75, 1.0])

    def test_upsample_matches_scalar_oracle(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = F.bilinear_resize(x, 4, 4)
        np.testing.assert_allclose(out, naive_bilinear(x, 4, 4), atol=1e-12)
        assert [out[0, 0, 0, 0], out[0, 0, 0, 3], out[0, 0, 3, 0], out[0, 0, 3, 3]] == [1, 2, 3, 4]

    def test_downsample_matches_scalar_oracle(self, rng):
        x = rng.standard_normal((2, 3, 9, 7))
        np.testing.assert_allclose(F.bilinear_resize(x, 4, 5), naive_bilinear(x, 4, 5), atol=1e-12)

    def test_backward_is_adjoint(self, rng):
        x = rng.standard_normal((1, 2, 3, 5))
        g = rng.standard_normal((1, 2, 8, 6))
        lhs = np.sum(F.bilinear_resize(x, 8, 6) * g)
        rhs = np.sum(x * F.bilinear_resize_backward(g, 3, 5))
        assert lhs == pytest.approx(rhs, rel=1e-10)


class TestFuse:
    def test_identities(self, rng):
        x = rng.standard_normal((1, 2, 3, 3))
        np.testing.assert_array_equal(F.fuse(x, np.zeros_like(x), "sum"), x)
        np.testing.assert_array_equal(F.fuse(x, np.ones_like(x), "mul"), x)

    def test_elementwise(self):
        a = np.array([1.0, 2.0])
        b = np.array([3.0, 4.0])
        np.testing.assert_array_equal(F.fuse(a, b, "sum"), [4.0, 6.0])
        np.testing.assert_array_equal(F.fuse(a, b, "mul"), [3.0, 8.0])

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError, match="fuse"):
            F.fuse(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)), "sum")


# =============================================================================
# Cross-entropy
# =============================================================================


def _logits(a, b):
    return np.array([a, b], dtype=np.float64).reshape(1, 2, 1, 1)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        ce = F.softmax_ce_per_pixel(_logits(0.3, 0.3), np.zeros((1, 1, 1, 1)))
        assert ce.loss.item() == pytest.approx(math.log(2.0))

    def test_confident_pixel_keeps_tiny_loss(self):
        ce = F.softmax_ce_per_pixel(_logits(10.0, -10.0), np.zeros((1, 1, 1, 1)))
        assert ce.loss.item() == pytest.approx(2.0611536e-9, rel=1e-6)
        assert ce.loss.item() > 0

    def test_three_to_one_odds(self):
        ce = F.softmax_ce_per_pixel(_logits(0.0, math.log(3.0)), np.ones((1, 1, 1, 1)))
        assert ce.loss.item() == pytest.approx(-math.log(0.75))

    def test_probabilities_sum_to_one(self, rng):
        logits = rng.standard_normal((2, 2, 4, 4)) * 5
        ce = F.softmax_ce_per_pixel(logits, rng.integers(0, 2, (2, 1, 4, 4)))
        np.testing.assert_allclose(ce.probs.sum(axis=1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("bad", [2, -1, 0.5])
    def test_label_outside_classes(self, bad):
        with pytest.raises(DataError, match="labels"):
            F.softmax_ce_per_pixel(_logits(0.0, 0.0), np.full((1, 1, 1, 1), bad))

    def test_backward_is_softmax_minus_one_hot(self, rng):
        logits = rng.standard_normal((1, 2, 3, 3))
        labels = rng.integers(0, 2, (1, 1, 3, 3))
        ce = F.softmax_ce_per_pixel(logits, labels)
        grad = F.softmax_ce_backward(ce.probs, labels, np.ones((1, 1, 3, 3)))
        one_hot = np.concatenate([labels == 0, labels == 1], axis=1)
        np.testing.assert_allclose(grad, ce.probs - one_hot)


# =============================================================================
# Debug checks
# =============================================================================


@pytest.fixture
def debug_checks(monkeypatch):
    monkeypatch.setattr(settings, "debug_checks", True)
    yield settings


INF = np.full((1, 2, 3, 3), np.inf)

NON_FINITE_CASES = {
    "activation (relu)": lambda: F.activation(INF, "relu"),
    "activation_backward (relu)": lambda: F.activation_backward(INF, INF, INF, "relu"),
    "fuse (mul)": lambda: F.fuse(INF, 2 * np.ones_like(INF), "mul"),
    "fuse (sum)": lambda: F.fuse(INF, np.ones_like(INF), "sum"),
    "fuse_backward": lambda: F.fuse_backward(INF, INF, INF, "mul"),
    "bilinear_resize": lambda: F.bilinear_resize(INF, 5, 5),
    "bilinear_resize_backward": lambda: F.bilinear_resize_backward(INF, 2, 2),
    "softmax_ce_per_pixel": lambda: F.softmax_ce_per_pixel(
        np.array([np.inf, 0.0]).reshape(1, 2, 1, 1), np.ones((1, 1, 1, 1))
    ),
    "softmax_ce_backward": lambda: F.softmax_ce_backward(
        np.full((1, 2, 1, 1), 0.5), np.zeros((1, 1, 1, 1)), np.full((1, 1, 1, 1), np.inf)
    ),
}


class TestDebugChecks:
    def test_off_by_default(self):
        assert np.isinf(F.activation(INF, "relu")).all()

    @pytest.mark.parametrize("where", sorted(NON_FINITE_CASES))
    def test_non_finite_output_is_named(self, debug_checks, where):
        with np.errstate(invalid="ignore", over="ignore"):
            with pytest.raises(NumericError) as info:
                NON_FINITE_CASES[where]()
        assert str(info.value).startswith(f"non-finite values produced by {where}")

    def test_transpose_conv_weight_gradient(self, debug_checks, rng):
        p = ConvParams(weight=rng.standard_normal((2, 1, 3, 3)), stride=2, padding=1)
        x = np.ones((1, 2, 3, 3))
        x[0, 0, 1, 1] = np.inf
        grad = rng.standard_normal((1, 1, 6, 6))
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError, match="conv2d_transpose_backward"):
                F.conv2d_transpose_backward(x, p, grad)


# =============================================================================
# Optimizer
# =============================================================================


class TestSgdMomentum:
    def test_zero_lr_leaves_param(self):
        param = np.array([1.0, -2.0])
        sgd_momentum_step(param, np.array([5.0, 5.0]), np.zeros(2), 0.0, 0.9, 5e-4)
        np.testing.assert_array_equal(param, [1.0, -2.0])

    def test_two_step_recursion(self):
        param, velocity = np.array([1.0]), np.array([0.0])
        sgd_momentum_step(param, np.array([1.0]), velocity, 0.1, 0.9, 0.0)
        assert velocity[0] == pytest.approx(1.0)
        assert param[0] == pytest.approx(0.9)
        sgd_momentum_step(param, np.array([1.0]), velocity, 0.1, 0.9, 0.0)
        assert velocity[0] == pytest.approx(1.9)
        assert param[0] == pytest.approx(0.71)

    def test_decay_only(self):
        param = np.array([1.0])
        sgd_momentum_step(param, np.array([0.0]), np.array([0.0]), 0.01, 0.9, 5e-4)
        assert param[0] == pytest.approx(0.999995)

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError, match="sgd"):
            sgd_momentum_step(np.zeros(2), np.zeros(3), np.zeros(2), 0.1, 0.9, 0.0)


# =============================================================================
# Layers
# =============================================================================


class TestLayers:
    def test_backward_needs_train_forward(self, rng):
        conv = Conv2d("c", 2, 2, 3, dtype=np.float64)
        x = rng.standard_normal((1, 2, 4, 4))
        with pytest.raises(StateError, match="c:"):
            conv.backward(np.zeros((1, 2, 4, 4)))
        conv.forward(x, "infer")
        with pytest.raises(StateError):
            conv.backward(np.zeros((1, 2, 4, 4)))

    def test_infer_leaves_no_pattern(self):
        act = Activation("a", "relu")
        act.forward(np.ones((1, 1, 2, 2)), "infer")
        assert act.last_pattern is None

    def test_named_learnables(self):
        bn = BatchNorm2d("x.bn", 3)
        assert list(bn.parameters()) == ["x.bn.gamma", "x.bn.beta"]
        assert list(bn.buffers()) == ["x.bn.running_mean", "x.bn.running_var"]
        assert list(Conv2d("x.conv", 2, 3, 3, bias=True).parameters()) == [
            "x.conv.weight",
            "x.conv.bias",
        ]

    def test_mac_counter(self):
        conv = Conv2d("c", 3, 4, 3, stride=2)
        tconv = ConvTranspose2d("t", 4, 2)
        with MacCounter() as counter:
            y = conv.forward(np.zeros((1, 3, 8, 8), dtype=np.float32), "infer")
            tconv.forward(y, "infer")
        assert counter.layers == {"c": 3 * 4 * 9 * 4 * 4, "t": 4 * 2 * 9 * 8 * 8}
        assert counter.total == sum(counter.layers.values())

    def test_public_kernels_and_layers_are_documented(self):
        kernels = [
            "conv2d_forward", "conv2d_backward", "conv2d_transpose_forward",
            "conv2d_transpose_backward", "batchnorm_forward", "batchnorm_backward",
            "activation", "bilinear_resize", "fuse", "softmax", "softmax_ce_per_pixel",
            "softmax_ce_backward",
        ]
        assert [n for n in kernels if not getattr(F, n).__doc__] == []
        layers = [Conv2d, ConvTranspose2d, BatchNorm2d, Activation, Resize, Fuse]
        assert [c.__name__ for c in layers if not c.forward.__doc__] == []
