"""Differentiable primitives consumed by the generator and discriminator.

Every function takes DiffArrays (or array-likes, wrapped as constants) and
returns a new DiffArray carrying its vector-Jacobian product. Image tensors
use the [N, C, H, W] layout; instance norm and FiLM reduce over the last two
axes only, so any leading batch axes are allowed.

Convolution boundary handling is zero padding; stride-1 layers keep the
spatial size ("same"), stride-2 layers halve it.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from qspace_dwi.diffcore.array import DiffArray, FloatArray, as_diff, unbroadcast
from qspace_dwi.exceptions import ShapeError

LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def square(x: DiffArray) -> DiffArray:
    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        return (2.0 * x.values * g,)

    return DiffArray.from_op(x.values * x.values, "square", (x,), vjp)


def absolute(x: DiffArray) -> DiffArray:
    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        return (np.sign(x.values) * g,)

    return DiffArray.from_op(np.abs(x.values), "abs", (x,), vjp)


def tanh(x: DiffArray) -> DiffArray:
    y = np.tanh(x.values)

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        return (g * (1.0 - y * y),)

    return DiffArray.from_op(y, "tanh", (x,), vjp)


def leaky_relu(x: DiffArray, slope: float = LEAKY_SLOPE) -> DiffArray:
    """Leaky rectifier with negative-side slope `slope`."""
    positive = x.values > 0
    scale = np.where(positive, 1.0, slope).astype(x.dtype)

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        return (g * scale,)

    return DiffArray.from_op(x.values * scale, "leaky_relu", (x,), vjp)


def clip(x: DiffArray, low: float, high: float) -> DiffArray:
    """Clamp to [low, high]; the gradient is zero where the clamp is active."""
    inside = (x.values >= low) & (x.values <= high)

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        return (np.where(inside, g, 0.0).astype(g.dtype),)

    return DiffArray.from_op(np.clip(x.values, low, high), "clip", (x,), vjp)


# ---------------------------------------------------------------------------
# Shape and reductions
# ---------------------------------------------------------------------------


def reshape(x: DiffArray, shape: tuple[int, ...]) -> DiffArray:
    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        return (g.reshape(x.shape),)

    return DiffArray.from_op(x.values.reshape(shape), "reshape", (x,), vjp)


def concat(xs: Sequence[DiffArray], axis: int = 1) -> DiffArray:
    """Concatenate along `axis` (channel axis by default, for U-Net skips)."""
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0, *sizes])

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        parts: list[FloatArray | None] = []
        for i in range(len(xs)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            parts.append(g[tuple(index)])
        return parts

    out = np.concatenate([x.values for x in xs], axis=axis)
    return DiffArray.from_op(out, "concat", tuple(xs), vjp)


def sum_(
    x: DiffArray, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
) -> DiffArray:
    out = np.sum(x.values, axis=axis, keepdims=keepdims)

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return DiffArray.from_op(out, "sum", (x,), vjp)


def mean(
    x: DiffArray, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
) -> DiffArray:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / count)


# ---------------------------------------------------------------------------
# Affine layers
# ---------------------------------------------------------------------------


def linear(x: DiffArray, weight: DiffArray, bias: DiffArray | None = None) -> DiffArray:
    """Affine map `x @ weight.T + bias` for x of shape [N, in] and weight [out, in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.values @ weight.values.T

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        gx = g @ weight.values if x.requires_grad else None
        gw = g.T @ x.values if weight.requires_grad else None
        return gx, gw

    result = DiffArray.from_op(out, "linear", (x, weight), vjp)
    return result if bias is None else result + bias


def _pad_hw(values: FloatArray, padding: int) -> FloatArray:
    if padding == 0:
        return values
    return np.pad(values, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(
    x: DiffArray,
    weight: DiffArray,
    bias: DiffArray | None = None,
    stride: int = 1,
    name: str = "conv2d",
) -> DiffArray:
    """2D cross-correlation with zero padding `k // 2`.

    Args:
        x: Input of shape [N, C_in, H, W].
        weight: Kernel of shape [C_out, C_in, k, k] with odd k.
        bias: Optional [C_out] bias.
        stride: 1 (same size) or 2 (halves H and W).
        name: Node name used in non-finite reports.

    Returns:
        Output of shape [N, C_out, H_out, W_out].
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"{name}: input {x.shape} incompatible with kernel {weight.shape}")
    k = weight.shape[2]
    if k % 2 == 0 or weight.shape[3] != k:
        raise ShapeError(f"{name}: kernel must be square with odd size, got {weight.shape}")
    pad = k // 2
    n, _, h, w = x.shape
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1

    padded = _pad_hw(x.values, pad)
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows[:, :, :h_out, :w_out]
    # [N, H_out, W_out, C_out] -> [N, C_out, H_out, W_out]
    out = np.tensordot(windows, weight.values, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        gw = None
        if weight.requires_grad:
            gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        gx = None
        if x.requires_grad:
            gpad = np.zeros_like(padded)
            span_h = stride * (h_out - 1) + 1
            span_w = stride * (w_out - 1) + 1
            for i in range(k):
                for j in range(k):
                    contrib = np.tensordot(weight.values[:, :, i, j], g, axes=([0], [1]))
                    rows = slice(i, i + span_h, stride)
                    cols = slice(j, j + span_w, stride)
                    gpad[:, :, rows, cols] += contrib.transpose(1, 0, 2, 3)
            gx = gpad[:, :, pad : pad + h, pad : pad + w] if pad else gpad
        return gx, gw

    result = DiffArray.from_op(np.ascontiguousarray(out), name, (x, weight), vjp)
    if bias is None:
        return result
    return result + reshape(bias, (1, -1, 1, 1))


def upsample_nearest(x: DiffArray, factor: int = 2) -> DiffArray:
    """Nearest-neighbour upsampling of the last two axes by `factor`."""
    out = x.values.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        *lead, h, w = g.shape
        blocks = g.reshape(*lead, h // factor, factor, w // factor, factor)
        return (blocks.sum(axis=(-3, -1)),)

    return DiffArray.from_op(out, "upsample", (x,), vjp)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def instance_norm(h: DiffArray, epsilon: float = 1e-5) -> DiffArray:
    """Per-sample, per-channel standardization over the last two axes.

    Computes (h - mean) / sqrt(var + epsilon) with the biased variance, so a
    constant channel maps to zeros.
    """
    if h.ndim < 2 or h.shape[-1] * h.shape[-2] < 1:
        raise ShapeError(f"instance_norm needs a spatial raster, got {h.shape}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    axes = (-2, -1)
    centered = h.values - h.values.mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=axes, keepdims=True) + epsilon)
    y = centered * inv_std

    def vjp(g: FloatArray) -> Sequence[FloatArray | None]:
        g_mean = g.mean(axis=axes, keepdims=True)
        gy_mean = (g * y).mean(axis=axes, keepdims=True)
        return (inv_std * (g - g_mean - y * gy_mean),)

    return DiffArray.from_op(y.astype(h.dtype), "instance_norm", (h,), vjp)


def modulate(h: DiffArray, gamma: DiffArray, beta: DiffArray) -> DiffArray:
    """Channel-wise scale and shift: gamma and beta are [N, C], h is [N, C, H, W]."""
    if gamma.shape != beta.shape or gamma.shape != h.shape[:2]:
        raise ShapeError(
            f"modulation length mismatch: h {h.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    n, c = gamma.shape
    return h * reshape(gamma, (n, c, 1, 1)) + reshape(beta, (n, c, 1, 1))


__all__ = [
    "LEAKY_SLOPE",
    "absolute",
    "as_diff",
    "clip",
    "concat",
    "conv2d",
    "instance_norm",
    "leaky_relu",
    "linear",
    "mean",
    "modulate",
    "reshape",
    "square",
    "sum_",
    "tanh",
    "unbroadcast",
    "upsample_nearest",
]
