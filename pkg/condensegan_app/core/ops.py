"""Differentiable operations used by the generator and the discriminator.

Convolutions follow the im2col formulation: a strided window view of the
padded input is contracted with the kernel through ``np.tensordot``. The
transposed convolution is its exact adjoint (scatter-add of kernel copies).
"""

from __future__ import annotations

from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..constants import BCE_EPSILON, INSTANCE_NORM_EPSILON, LEAKY_SLOPE
from ..errors import ConfigurationError, DimensionError, DomainError
from .tensor import Tensor


class Activation(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _windows(padded: np.ndarray, kernel: int, stride: int, rows: int, cols: int) -> np.ndarray:
    """(N, C, rows, cols, k, k) view of the kernel-sized windows at each output position."""
    view = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    return view[:, :, ::stride, ::stride][:, :, :rows, :cols]


def _scatter(target: np.ndarray, cols: np.ndarray, stride: int, rows: int, width: int) -> None:
    """Add ``cols`` (N, rows, width, C, k, k) into ``target`` at strided kernel offsets."""
    kernel = cols.shape[-1]
    for i in range(kernel):
        for j in range(kernel):
            target[
                :,
                :,
                i : i + stride * (rows - 1) + 1 : stride,
                j : j + stride * (width - 1) + 1 : stride,
            ] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)


def _check_conv_args(x: Tensor, weight: Tensor, stride: int, padding: int, in_axis: int) -> None:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(
            f"convolution expects 4-d input and weight, got {x.shape} and {weight.shape}"
        )
    if weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"kernel must be square, got {weight.shape[2:]}")
    if x.shape[1] != weight.shape[in_axis]:
        raise DimensionError(
            f"input has {x.shape[1]} channels but weight expects {weight.shape[in_axis]}"
        )
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid stride={stride} / padding={padding}")


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` (N, C, H, W) with ``weight`` (O, C, k, k)."""
    _check_conv_args(x, weight, stride, padding, in_axis=1)
    _, _, height, width = x.shape
    kernel = weight.shape[2]
    rows = conv_output_size(height, kernel, stride, padding)
    cols_out = conv_output_size(width, kernel, stride, padding)
    if rows < 1 or cols_out < 1:
        raise ConfigurationError(
            f"conv2d output would be {rows}x{cols_out} for input {height}x{width}, "
            f"kernel {kernel}, stride {stride}, padding {padding}"
        )

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    padded = np.pad(x.data, pad) if padding else x.data
    cols = _windows(padded, kernel, stride, rows, cols_out)
    out_data = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = Tensor._result(out_data, (x, weight), "conv2d")

    def backward(grad: np.ndarray):
        grad_w = None
        grad_x = None
        if weight.requires_grad:
            grad_w = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            dcols = np.tensordot(grad, weight.data, axes=([1], [0]))
            dpadded = np.zeros(padded.shape, dtype=padded.dtype)
            _scatter(dpadded, dcols, stride, rows, cols_out)
            grad_x = dpadded[:, :, padding : padding + height, padding : padding + width]
        return ((x, grad_x), (weight, grad_w))

    out._backward = backward
    return out


def conv_transpose2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of ``x`` (N, C, H, W) with ``weight`` (C, O, k, k)."""
    _check_conv_args(x, weight, stride, padding, in_axis=0)
    batch, _, height, width = x.shape
    out_channels, kernel = weight.shape[1], weight.shape[2]
    rows = conv_transpose_output_size(height, kernel, stride, padding)
    cols_out = conv_transpose_output_size(width, kernel, stride, padding)
    if rows < 1 or cols_out < 1:
        raise ConfigurationError(
            f"conv_transpose2d output would be {rows}x{cols_out} for input {height}x{width}"
        )

    full_rows = (height - 1) * stride + kernel
    full_cols = (width - 1) * stride + kernel
    dtype = np.result_type(x.data, weight.data)
    full = np.zeros((batch, out_channels, full_rows, full_cols), dtype=dtype)
    _scatter(full, np.tensordot(x.data, weight.data, axes=([1], [0])), stride, height, width)
    out_data = full[:, :, padding : padding + rows, padding : padding + cols_out]
    out = Tensor._result(out_data, (x, weight), "conv_transpose2d")

    def backward(grad: np.ndarray):
        grad_full = np.zeros(full.shape, dtype=dtype)
        grad_full[:, :, padding : padding + rows, padding : padding + cols_out] = grad
        windows = _windows(grad_full, kernel, stride, height, width)
        grad_x = None
        grad_w = None
        if x.requires_grad:
            grad_x = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(
                0, 3, 1, 2
            )
        if weight.requires_grad:
            grad_w = np.tensordot(x.data, windows, axes=([0, 2, 3], [0, 2, 3]))
        return ((x, grad_x), (weight, grad_w))

    out._backward = backward
    return out


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate along the channel axis, first argument's channels first."""
    if not tensors:
        raise DimensionError("concat_channels needs at least one tensor")
    first = tensors[0]
    for other in tensors:
        if other.ndim != 4:
            raise DimensionError(f"concat_channels expects 4-d tensors, got {other.shape}")
        if (other.shape[0], *other.shape[2:]) != (first.shape[0], *first.shape[2:]):
            raise DimensionError(
                f"concat_channels batch/spatial mismatch: {first.shape} vs {other.shape}"
            )
    if len(tensors) == 1:
        return first
    out = Tensor._result(np.concatenate([t.data for t in tensors], axis=1), tensors, "concat")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(grad: np.ndarray):
        return tuple(
            (t, grad[:, bounds[i] : bounds[i + 1]]) for i, t in enumerate(tensors)
        )

    out._backward = backward
    return out


def slice_channels(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Keep the listed channels (unique ids) in the given order."""
    index = np.asarray(indices, dtype=np.int64)
    if index.size == 0 or len(set(index.tolist())) != index.size:
        raise DimensionError("slice_channels needs a non-empty set of unique indices")
    if index.min() < 0 or index.max() >= x.shape[1]:
        raise DimensionError(f"channel index out of range for {x.shape[1]} channels")
    out = Tensor._result(x.data[:, index], (x,), "slice")

    def backward(grad: np.ndarray):
        full = np.zeros(x.shape, dtype=x.dtype)
        full[:, index] = grad
        return ((x, full),)

    out._backward = backward
    return out


def activation(
    x: Tensor, kind: Union[Activation, str], slope: float = LEAKY_SLOPE
) -> Tensor:
    """Apply an elementwise nonlinearity; relu's subgradient at 0 is 0."""
    kind = Activation(kind)
    data = x.data
    if kind is Activation.RELU:
        out_data = np.maximum(data, 0)
        local = (data > 0).astype(data.dtype)
    elif kind is Activation.LEAKY_RELU:
        if not 0.0 < slope < 1.0:
            raise DomainError(f"leaky_relu slope must lie in (0, 1), got {slope}")
        local = np.where(data > 0, 1.0, slope).astype(data.dtype)
        out_data = data * local
    elif kind is Activation.TANH:
        out_data = np.tanh(data)
        local = 1 - out_data * out_data
    else:
        out_data = (0.5 * (1.0 + np.tanh(0.5 * data))).astype(data.dtype)
        local = out_data * (1 - out_data)

    out = Tensor._result(out_data, (x,), kind.value)
    out._backward = lambda grad: ((x, grad * local),)
    return out


def instance_norm(x: Tensor, eps: float = INSTANCE_NORM_EPSILON) -> Tensor:
    """Normalise every (sample, channel) plane to zero mean and unit variance."""
    if x.ndim != 4:
        raise DimensionError(f"instance_norm expects a 4-d tensor, got {x.shape}")
    mean = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=(2, 3), keepdims=True) + eps)
    normed = (centered * inv_std).astype(x.dtype)
    out = Tensor._result(normed, (x,), "instance_norm")

    def backward(grad: np.ndarray):
        grad_mean = grad.mean(axis=(2, 3), keepdims=True)
        proj = (grad * normed).mean(axis=(2, 3), keepdims=True)
        return ((x, inv_std * (grad - grad_mean - normed * proj)),)

    out._backward = backward
    return out


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """mean |pred - target|."""
    if pred.shape != target.shape:
        raise DimensionError(f"l1 shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    out = Tensor._result(np.asarray(np.abs(diff).mean(), dtype=diff.dtype), (pred, target), "l1")

    def backward(grad: np.ndarray):
        local = grad * np.sign(diff) / count
        return ((pred, local), (target, -local))

    out._backward = backward
    return out


def bce_loss(pred: Tensor, target: Tensor, eps: float = BCE_EPSILON) -> Tensor:
    """-mean[t log p + (1 - t) log(1 - p)] with p clamped to [eps, 1 - eps]."""
    if pred.shape != target.shape:
        raise DimensionError(f"bce shape mismatch: {pred.shape} vs {target.shape}")
    if pred.data.min() < 0.0 or pred.data.max() > 1.0:
        raise DomainError("bce predictions must lie in [0, 1]")
    inside = (pred.data >= eps) & (pred.data <= 1.0 - eps)
    p = np.clip(pred.data.astype(np.float64), eps, 1.0 - eps)
    t = target.data.astype(np.float64)
    count = p.size
    value = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean()
    out = Tensor._result(np.asarray(value, dtype=pred.dtype), (pred,), "bce")

    def backward(grad: np.ndarray):
        local = (-(t / p) + (1.0 - t) / (1.0 - p)) / count
        return ((pred, (grad * local * inside).astype(pred.dtype)),)

    out._backward = backward
    return out


def weighted_channel_l1(
    weight: Tensor,
    coefficients: np.ndarray,
    channel_axis: int,
    channel_sums: Optional[np.ndarray] = None,
) -> Tensor:
    """sum_c coefficients[c] * ||weight[channel c]||_1 as a differentiable scalar.

    The coefficients are constants of the step (the sort permutation is not
    differentiated).
    """
    coefficients = np.asarray(coefficients, dtype=weight.dtype)
    if coefficients.shape != (weight.shape[channel_axis],):
        raise DimensionError(
            f"expected {weight.shape[channel_axis]} channel coefficients, got {coefficients.shape}"
        )
    if channel_sums is None:
        other_axes = tuple(a for a in range(weight.ndim) if a != channel_axis)
        channel_sums = np.abs(weight.data).sum(axis=other_axes)
    value = np.asarray((coefficients * channel_sums).sum(), dtype=weight.dtype)
    out = Tensor._result(value, (weight,), "weighted_channel_l1")
    shape = [1] * weight.ndim
    shape[channel_axis] = coefficients.size
    local = np.sign(weight.data) * coefficients.reshape(shape)
    out._backward = lambda grad: ((weight, grad * local),)
    return out
