"""Stateless forward/backward kernels for every layer kind HrSegNet uses.

Each ``*_forward`` has a matching ``*_backward`` that returns gradients with
respect to its inputs and learnables. Convolution is cross-correlation (no
kernel flip).
"""

from functools import lru_cache
from typing import NamedTuple, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core.errors import DataError, ShapeError
from .tensor import (
    BatchNormState,
    ConvParams,
    Tensor,
    assert_finite,
    check_same_shape,
    check_tensor,
    conv_output_size,
    conv_transpose_output_size,
)

ACTIVATIONS = ("relu", "sigmoid")
FUSION_MODES = ("sum", "mul")
BN_MODES = ("train", "infer")


def _pad(x: Tensor, padding: int) -> Tensor:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp: Tensor, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Strided (N, C, out_h, out_w, k, k) view of the padded input."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]


def _scatter_input_grad(
    grad: Tensor, weight: np.ndarray, stride: int, padding: int, out_h: int, out_w: int
) -> Tensor:
    """Adjoint of the convolution core: spread ``grad`` back through ``weight``.

    ``weight`` is (A, B, k, k) and ``grad`` has A channels; the result has B
    channels and spatial size (out_h, out_w).
    """
    n, _, gh, gw = grad.shape
    b, k = weight.shape[1], weight.shape[2]
    padded = np.zeros((n, b, out_h + 2 * padding, out_w + 2 * padding), dtype=grad.dtype)
    # (N, gh, gw, B, k, k)
    contrib = np.tensordot(grad, weight, axes=([1], [0]))
    for i in range(k):
        for j in range(k):
            padded[
                :, :, i : i + stride * (gh - 1) + 1 : stride, j : j + stride * (gw - 1) + 1 : stride
            ] += contrib[..., i, j].transpose(0, 3, 1, 2)
    return padded[:, :, padding : padding + out_h, padding : padding + out_w]


def conv2d_forward(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlate ``x`` with ``p.weight`` and add the bias."""
    check_tensor(x, "conv2d input")
    c_out, c_in, k, _ = p.weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv2d expects {c_in} input channels, got {x.shape[1]}")
    out_h = conv_output_size(x.shape[2], k, p.stride, p.padding)
    out_w = conv_output_size(x.shape[3], k, p.stride, p.padding)
    cols = _windows(_pad(x, p.padding), k, p.stride, out_h, out_w)
    out = np.tensordot(cols, p.weight, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if p.bias is not None:
        out += p.bias.reshape(1, c_out, 1, 1)
    assert_finite(out, "conv2d_forward")
    return out


def conv2d_backward(
    x: Tensor, p: ConvParams, grad: Tensor
) -> Tuple[Tensor, np.ndarray, Optional[np.ndarray]]:
    """Gradients of conv2d w.r.t. input, weight and bias."""
    k = p.kernel_size
    out_h, out_w = grad.shape[2], grad.shape[3]
    cols = _windows(_pad(x, p.padding), k, p.stride, out_h, out_w)
    d_weight = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))
    d_bias = grad.sum(axis=(0, 2, 3)) if p.bias is not None else None
    d_x = _scatter_input_grad(grad, p.weight, p.stride, p.padding, x.shape[2], x.shape[3])
    assert_finite(d_x, "conv2d_backward")
    return np.ascontiguousarray(d_x), d_weight, d_bias


def conv2d_transpose_forward(x: Tensor, p: ConvParams, output_padding: int = 0) -> Tensor:
    """Adjoint of conv2d; ``output_padding`` extends the bottom and right edges."""
    check_tensor(x, "conv2d_transpose input")
    c_in, c_out, k, _ = p.weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv2d_transpose expects {c_in} input channels, got {x.shape[1]}")
    out_h = conv_transpose_output_size(x.shape[2], k, p.stride, p.padding, output_padding)
    out_w = conv_transpose_output_size(x.shape[3], k, p.stride, p.padding, output_padding)
    out = np.ascontiguousarray(_scatter_input_grad(x, p.weight, p.stride, p.padding, out_h, out_w))
    if p.bias is not None:
        out += p.bias.reshape(1, c_out, 1, 1)
    assert_finite(out, "conv2d_transpose_forward")
    return out


def conv2d_transpose_backward(
    x: Tensor, p: ConvParams, grad: Tensor
) -> Tuple[Tensor, np.ndarray, Optional[np.ndarray]]:
    """Gradients of the transposed convolution w.r.t. input, weight and bias."""
    k = p.kernel_size
    in_h, in_w = x.shape[2], x.shape[3]
    # the input gradient of an adjoint is the original convolution
    d_x = conv2d_forward(grad, ConvParams(weight=p.weight, stride=p.stride, padding=p.padding))
    if d_x.shape != x.shape:
        raise ShapeError(f"transposed conv gradient has shape {d_x.shape}, expected {x.shape}")
    gcols = _windows(_pad(grad, p.padding), k, p.stride, in_h, in_w)
    d_weight = np.tensordot(x, gcols, axes=([0, 2, 3], [0, 2, 3]))
    d_bias = grad.sum(axis=(0, 2, 3)) if p.bias is not None else None
    assert_finite(d_weight, "conv2d_transpose_backward")
    return d_x, d_weight, d_bias


def _channel(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1)


def batchnorm_forward(x: Tensor, s: BatchNormState, mode: str) -> Tensor:
    """Normalize per channel; ``"train"`` also updates the running statistics."""
    check_tensor(x, "batchnorm input")
    if x.shape[1] != s.channels:
        raise ShapeError(f"batchnorm expects {s.channels} channels, got {x.shape[1]}")
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        s.running_mean[...] = s.momentum * s.running_mean + (1.0 - s.momentum) * mean
        s.running_var[...] = s.momentum * s.running_var + (1.0 - s.momentum) * var
    elif mode == "infer":
        mean, var = s.running_mean, s.running_var
    else:
        raise ShapeError(f"unknown batchnorm mode '{mode}'")
    inv_std = 1.0 / np.sqrt(var + s.epsilon)
    x_hat = (x - _channel(mean)) * _channel(inv_std)
    out = (_channel(s.gamma) * x_hat + _channel(s.beta)).astype(x.dtype, copy=False)
    assert_finite(out, "batchnorm_forward")
    return out


def batchnorm_backward(
    x: Tensor, s: BatchNormState, grad: Tensor
) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Train-mode gradients w.r.t. input, gamma and beta (batch statistics)."""
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.mean(axis=axes)
    inv_std = 1.0 / np.sqrt(x.var(axis=axes) + s.epsilon)
    x_hat = (x - _channel(mean)) * _channel(inv_std)
    d_beta = grad.sum(axis=axes)
    d_gamma = (grad * x_hat).sum(axis=axes)
    d_xhat = grad * _channel(s.gamma)
    d_x = (
        _channel(inv_std)
        / m
        * (
            m * d_xhat
            - d_xhat.sum(axis=axes, keepdims=True)
            - x_hat * (d_xhat * x_hat).sum(axis=axes, keepdims=True)
        )
    )
    d_x = d_x.astype(x.dtype, copy=False)
    assert_finite(d_x, "batchnorm_backward")
    return d_x, d_gamma, d_beta


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise ReLU or sigmoid."""
    if kind == "relu":
        out = np.maximum(x, 0)
    elif kind == "sigmoid":
        z = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
    else:
        raise ShapeError(f"unknown activation '{kind}'")
    assert_finite(out, f"activation ({kind})")
    return out


def activation_backward(x: Tensor, out: Tensor, grad: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        d_x = grad * (x > 0)
    elif kind == "sigmoid":
        d_x = grad * out * (1.0 - out)
    else:
        raise ShapeError(f"unknown activation '{kind}'")
    assert_finite(d_x, f"activation_backward ({kind})")
    return d_x


@lru_cache(maxsize=256)
def _interp_matrix(in_size: int, out_size: int, dtype_name: str) -> np.ndarray:
    """Row-stochastic (out_size, in_size) matrix of half-pixel bilinear weights."""
    scale = in_size / out_size
    dst = np.arange(out_size, dtype=np.float64)
    src = np.clip((dst + 0.5) * scale - 0.5, 0.0, in_size - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_size - 1)
    w1 = src - i0
    rows = np.arange(out_size)
    m = np.zeros((out_size, in_size), dtype=np.float64)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    m = m.astype(dtype_name)
    m.setflags(write=False)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Half-pixel bilinear resize to ``out_h`` x ``out_w``; same size returns a copy."""
    check_tensor(x, "resize input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be >= 1, got {out_h}x{out_w}")
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    my = _interp_matrix(h, out_h, x.dtype.name)
    mx = _interp_matrix(w, out_w, x.dtype.name)
    out = np.ascontiguousarray(my @ (x @ mx.T))
    assert_finite(out, "bilinear_resize")
    return out


def bilinear_resize_backward(grad: Tensor, in_h: int, in_w: int) -> Tensor:
    _, _, out_h, out_w = grad.shape
    if (in_h, in_w) == (out_h, out_w):
        return grad.copy()
    my = _interp_matrix(in_h, out_h, grad.dtype.name)
    mx = _interp_matrix(in_w, out_w, grad.dtype.name)
    d_x = np.ascontiguousarray(my.T @ (grad @ mx))
    assert_finite(d_x, "bilinear_resize_backward")
    return d_x


def fuse(x_h: Tensor, x_s: Tensor, mode: str) -> Tensor:
    """Combine HR features with an equally shaped guide by sum or product."""
    check_same_shape(x_h, x_s, "fuse")
    if mode == "sum":
        out = x_h + x_s
    elif mode == "mul":
        out = x_h * x_s
    else:
        raise ShapeError(f"unknown fusion mode '{mode}'")
    assert_finite(out, f"fuse ({mode})")
    return out


def fuse_backward(x_h: Tensor, x_s: Tensor, grad: Tensor, mode: str) -> Tuple[Tensor, Tensor]:
    if mode == "sum":
        return grad, grad
    d_h, d_s = grad * x_s, grad * x_h
    assert_finite(d_h, "fuse_backward")
    assert_finite(d_s, "fuse_backward")
    return d_h, d_s


class CrossEntropyResult(NamedTuple):
    loss: Tensor  # (N, 1, H, W)
    probs: Tensor  # (N, C, H, W)


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    ids = np.asarray(labels)
    if ids.size and (ids.min() < 0 or ids.max() > num_classes - 1 or np.any(ids != np.round(ids))):
        raise DataError(f"labels must be class ids in [0, {num_classes - 1}]")
    return ids.astype(np.int64, copy=False)


def softmax(logits: Tensor) -> Tensor:
    """Class probabilities over axis 1."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_ce_per_pixel(logits: Tensor, labels: np.ndarray) -> CrossEntropyResult:
    """Per-pixel ``-log softmax`` of the true class, plus the probabilities."""
    check_tensor(logits, "logits")
    n, c, h, w = logits.shape
    if labels.shape != (n, 1, h, w):
        raise ShapeError(f"labels must be {(n, 1, h, w)}, got {labels.shape}")
    ids = _check_labels(labels, c)
    rel = logits - np.take_along_axis(logits, ids, axis=1)
    top = rel.max(axis=1, keepdims=True)
    e = np.exp(rel - top)
    is_true = np.arange(c).reshape(1, c, 1, 1) == ids
    others = np.where(is_true, 0.0, e).sum(axis=1, keepdims=True)
    s = others + np.take_along_axis(e, ids, axis=1)
    # when the true class is the max, log1p keeps tiny losses accurate
    loss = np.where(top > 0, top + np.log(s), np.log1p(others))
    loss = np.maximum(loss, np.finfo(logits.dtype).tiny).astype(logits.dtype, copy=False)
    assert_finite(loss, "softmax_ce_per_pixel")
    return CrossEntropyResult(loss=loss, probs=softmax(logits))


def softmax_ce_backward(probs: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """``(softmax - one_hot) * weights``; weights are (N, 1, H, W) reduction factors."""
    ids = _check_labels(labels, probs.shape[1])
    grad = probs.copy()
    np.put_along_axis(grad, ids, np.take_along_axis(grad, ids, axis=1) - 1.0, axis=1)
    grad = grad * weights
    assert_finite(grad, "softmax_ce_backward")
    return grad
