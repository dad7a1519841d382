"""Rank-4 (n, c, h, w) tensor primitives.

Tensors are plain C-contiguous numpy arrays. float32 is the working dtype;
float64 is used when certifying gradients. Every op keeps the dtype of its
primary input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import faults
from .errors import ChannelMismatch, NonIntegerOutputShape, OddSpatialDims, ShapeMismatch

Tensor4 = np.ndarray


def as_tensor4(x, name: str = "tensor") -> Tensor4:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeMismatch(f"{name} must be rank 4 (n, c, h, w), got shape {x.shape}")
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float32)
    return np.ascontiguousarray(x)


class Padding(NamedTuple):
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    @classmethod
    def uniform(cls, p: int) -> "Padding":
        return cls(p, p, p, p)

    def validate(self) -> "Padding":
        if min(self) < 0:
            raise ValueError(f"padding must be non-negative, got {tuple(self)}")
        return self


NO_PAD = Padding()


@dataclass
class ConvWeights:
    """Convolution filter bank of shape (c_out, c_in, k_h, k_w) with optional bias."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        if self.weight.ndim != 4 or min(self.weight.shape) < 1:
            raise ShapeMismatch(f"conv weight must be (c_out, c_in, k_h, k_w), got {self.weight.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias)
            if self.bias.shape != (self.c_out,):
                raise ShapeMismatch(f"bias must have shape ({self.c_out},), got {self.bias.shape}")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def astype(self, dtype) -> "ConvWeights":
        bias = None if self.bias is None else self.bias.astype(dtype)
        return ConvWeights(self.weight.astype(dtype), bias)


def conv_output_size(size: int, pad_lo: int, pad_hi: int, k: int, stride: int) -> int:
    span = size + pad_lo + pad_hi - k
    if span < 0 or span % stride:
        raise NonIntegerOutputShape(
            f"({size} + {pad_lo} + {pad_hi} - {k}) / {stride} + 1 is not a positive integer"
        )
    return span // stride + 1


def pad2d(x: Tensor4, padding: Padding) -> Tensor4:
    t, b, l, r = Padding(*padding).validate()
    if not (t or b or l or r):
        return x.copy()
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + t + b, w + l + r), dtype=x.dtype)
    out[:, :, t : t + h, l : l + w] = x
    return out


def unpad2d(x: Tensor4, padding: Padding) -> Tensor4:
    """Adjoint of :func:`pad2d`: crop the padded border."""
    t, b, l, r = padding
    h, w = x.shape[2], x.shape[3]
    return np.ascontiguousarray(x[:, :, t : h - b, l : w - r])


def im2col(x: Tensor4, kh: int, kw: int, stride: int) -> np.ndarray:
    """Windows of an already padded input as (n, ho, wo, c, kh, kw)."""
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def conv2d(x: Tensor4, weights: ConvWeights, stride: int = 1, padding: Padding = NO_PAD) -> Tensor4:
    """Zero-padded cross-correlation.

    The reduction runs over the (c_in, k_h, k_w) axis flattened channel-major,
    so the accumulation order is fixed for a given shape. Bias is added last.
    """
    n, c, h, w = x.shape
    if c != weights.c_in:
        raise ChannelMismatch(f"input has {c} channels, weights expect {weights.c_in}")
    if stride < 1:
        raise ValueError("stride must be positive")
    padding = Padding(*padding).validate()
    kh, kw = weights.kernel_size
    ho = conv_output_size(h, padding.top, padding.bottom, kh, stride)
    wo = conv_output_size(w, padding.left, padding.right, kw, stride)
    xp = pad2d(x, padding) if any(padding) else x
    cols = im2col(xp, kh, kw, stride).reshape(n * ho * wo, c * kh * kw)
    wmat = weights.weight.reshape(weights.c_out, -1).astype(x.dtype, copy=False)
    out = cols @ wmat.T
    if weights.bias is not None:
        out += weights.bias.astype(x.dtype, copy=False)
    return np.ascontiguousarray(out.reshape(n, ho, wo, weights.c_out).transpose(0, 3, 1, 2))


def conv1x1(x: Tensor4, weights: ConvWeights) -> Tensor4:
    return conv2d(x, weights, 1, NO_PAD)


def nn_interpolate_x2(x: Tensor4) -> Tensor4:
    return np.ascontiguousarray(np.repeat(np.repeat(x, 2, axis=2), 2, axis=3))


def block_sum_x2(g: Tensor4) -> Tensor4:
    """Adjoint of :func:`nn_interpolate_x2`."""
    n, c, h2, w2 = g.shape
    return g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


def _bilinear_taps(size: int):
    dst = np.arange(2 * size)
    src = np.maximum((dst + 0.5) / 2.0 - 0.5, 0.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_x2(x: Tensor4) -> Tensor4:
    """x2 bilinear upsampling, half-pixel centres, clamped borders."""
    _, _, h, w = x.shape
    y0, y1, fy = _bilinear_taps(h)
    x0, x1, fx = _bilinear_taps(w)
    fy = fy.astype(x.dtype)[:, None]
    fx = fx.astype(x.dtype)
    rows = x[:, :, y0, :] * (1 - fy) + x[:, :, y1, :] * fy
    return np.ascontiguousarray(rows[:, :, :, x0] * (1 - fx) + rows[:, :, :, x1] * fx)


def maxpool_x2(x: Tensor4) -> Tensor4:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddSpatialDims(f"maxpool_x2 needs even spatial dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def softmax_channels(x: Tensor4) -> Tensor4:
    if faults.active("softmax"):
        x = -x
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid_map(x: Tensor4) -> Tensor4:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def pixel_shuffle(x: Tensor4, r: int = 2) -> Tensor4:
    """(n, c*r*r, h, w) -> (n, c, h*r, w*r); channel c*r*r + i*r + j lands at (h*r+i, w*r+j)."""
    n, cr, h, w = x.shape
    if cr % (r * r):
        raise ShapeMismatch(f"{cr} channels not divisible by {r * r}")
    c = cr // (r * r)
    out = x.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, c, h * r, w * r))


def pixel_unshuffle(x: Tensor4, r: int = 2) -> Tensor4:
    """Inverse (and adjoint) of :func:`pixel_shuffle`."""
    n, c, hr, wr = x.shape
    h, w = hr // r, wr // r
    out = x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * r * r, h, w))


def concat_channels(*xs: Tensor4) -> Tensor4:
    return np.concatenate(xs, axis=1)
