"""Upsampling-kernel generation from encoder and decoder features.

Three routes produce the same kind of kernel map:

* ``gen_kernels_naive``: NN-interpolate the decoder, concatenate with the
  encoder, compress, convolve. Everything happens at high resolution.
* ``gen_kernels_semishift``: the encoder and decoder are compressed
  separately and share one h x h content convolution; the window moves two
  pixels on the encoder for every pixel on the decoder. Four corner
  sub-processes each produce an (n, K*K, H, W) map and are interleaved.
* ``gen_kernels_oracle``: slow per-window double sum, used as a reference.

Shapes: ``enc`` is (n, C, 2H, 2W), ``dec`` is (n, C, H, W).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ChannelMismatch, ShapeMismatch, UnsupportedWindow
from .rng import SplitMix64
from .tensor_core import (
    ConvWeights,
    Padding,
    Tensor4,
    as_tensor4,
    concat_channels,
    conv1x1,
    conv2d,
    nn_interpolate_x2,
    softmax_channels,
)

CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))
Schedule = Literal["auto", "unmerged", "merged"]


def init_conv(rng: SplitMix64, c_out: int, c_in: int, k: int, bias: bool = True, dtype=np.float32) -> ConvWeights:
    """Uniform init in +-1/sqrt(fan_in) for weight and bias."""
    bound = 1.0 / math.sqrt(c_in * k * k)
    w = rng.uniform(-bound, bound, (c_out, c_in, k, k), dtype)
    b = rng.uniform(-bound, bound, (c_out,), dtype) if bias else None
    return ConvWeights(w, b)


@dataclass
class KernelGenParams:
    """Learned weights of kernel generation.

    ``enc_compress`` (1x1, C -> d, no bias) and ``dec_compress`` (1x1, C -> d,
    with the single compressor bias) feed ``content`` (h x h, d -> K*K, bias).
    """

    enc_compress: ConvWeights
    dec_compress: ConvWeights
    content: ConvWeights

    def __post_init__(self):
        ec, dc, ct = self.enc_compress, self.dec_compress, self.content
        if ec.kernel_size != (1, 1) or dc.kernel_size != (1, 1):
            raise ShapeMismatch("compressors must be 1x1 convolutions")
        if ec.c_in != dc.c_in or ec.c_out != dc.c_out:
            raise ChannelMismatch("encoder and decoder compressors must both map C -> d")
        if ec.bias is not None:
            raise ShapeMismatch("the encoder compressor carries no bias")
        if dc.bias is None:
            raise ShapeMismatch("the decoder compressor must carry the compressor bias")
        if ct.c_in != ec.c_out:
            raise ChannelMismatch(f"content conv expects {ct.c_in} channels, compressors give {ec.c_out}")
        kh, kw = ct.kernel_size
        if kh != kw:
            raise UnsupportedWindow("content window must be square")
        k = math.isqrt(ct.c_out)
        if k * k != ct.c_out:
            raise ShapeMismatch(f"content conv must output K*K channels, got {ct.c_out}")

    @property
    def C(self) -> int:
        return self.enc_compress.c_in

    @property
    def d(self) -> int:
        return self.enc_compress.c_out

    @property
    def h(self) -> int:
        return self.content.kernel_size[0]

    @property
    def K(self) -> int:
        return math.isqrt(self.content.c_out)

    @property
    def dtype(self):
        return self.content.weight.dtype

    @classmethod
    def init(cls, C: int, d: int = 64, K: int = 5, h: int = 3, seed: int | SplitMix64 = 0, dtype=np.float32):
        rng = seed if isinstance(seed, SplitMix64) else SplitMix64(seed)
        enc = init_conv(rng, d, C, 1, bias=False, dtype=dtype)
        dec = init_conv(rng, d, C, 1, bias=True, dtype=dtype)
        content = init_conv(rng, K * K, d, h, bias=True, dtype=dtype)
        return cls(enc, dec, content)

    @classmethod
    def zeros(cls, C: int, d: int = 64, K: int = 5, h: int = 3, dtype=np.float32):
        z = lambda *s: np.zeros(s, dtype=dtype)  # noqa: E731
        return cls(
            ConvWeights(z(d, C, 1, 1)),
            ConvWeights(z(d, C, 1, 1), z(d)),
            ConvWeights(z(K * K, d, h, h), z(K * K)),
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "enc_compress.weight": self.enc_compress.weight,
            "dec_compress.weight": self.dec_compress.weight,
            "dec_compress.bias": self.dec_compress.bias,
            "content.weight": self.content.weight,
            "content.bias": self.content.bias,
        }

    @classmethod
    def from_dict(cls, p: dict[str, np.ndarray]) -> "KernelGenParams":
        return cls(
            ConvWeights(p["enc_compress.weight"]),
            ConvWeights(p["dec_compress.weight"], p["dec_compress.bias"]),
            ConvWeights(p["content.weight"], p["content.bias"]),
        )

    def astype(self, dtype) -> "KernelGenParams":
        return KernelGenParams.from_dict({k: v.astype(dtype) for k, v in self.as_dict().items()})


@dataclass
class KernelMap:
    """Per-position K*K kernels of shape (n, K*K, 2H, 2W), shared across channels."""

    tensor: Tensor4
    normalized: bool = True

    @property
    def K(self) -> int:
        return math.isqrt(self.tensor.shape[1])

    def max_normalization_error(self) -> float:
        return float(np.max(np.abs(self.tensor.sum(axis=1) - 1.0)))


def check_pair(enc: Tensor4, dec: Tensor4, C: int | None = None) -> tuple[Tensor4, Tensor4]:
    enc = as_tensor4(enc, "enc")
    dec = as_tensor4(dec, "dec")
    n, c, h, w = dec.shape
    if enc.shape[0] != n or enc.shape[2:] != (2 * h, 2 * w):
        raise ShapeMismatch(f"encoder {enc.shape} must be exactly twice decoder {dec.shape} spatially")
    if enc.shape[1] != c:
        raise ChannelMismatch(f"encoder has {enc.shape[1]} channels, decoder {c}")
    if C is not None and c != C:
        raise ChannelMismatch(f"features have {c} channels, parameters expect {C}")
    return enc, dec


def _params_as(p: KernelGenParams, dtype) -> KernelGenParams:
    return p if p.dtype == dtype else p.astype(dtype)


# -- naive route ------------------------------------------------------------


def naive_compress_weights(p: KernelGenParams) -> ConvWeights:
    """The 2C -> d compressor of the naive route: encoder weights then decoder weights."""
    w = np.concatenate([p.enc_compress.weight, p.dec_compress.weight], axis=1)
    return ConvWeights(w, p.dec_compress.bias)


def naive_logits(enc: Tensor4, dec: Tensor4, p: KernelGenParams) -> Tensor4:
    enc, dec = check_pair(enc, dec, p.C)
    p = _params_as(p, enc.dtype)
    x = concat_channels(enc, nn_interpolate_x2(dec))
    z = conv1x1(x, naive_compress_weights(p))
    return conv2d(z, p.content, 1, Padding.uniform(p.h // 2))


def gen_kernels_naive(enc: Tensor4, dec: Tensor4, p: KernelGenParams) -> KernelMap:
    return KernelMap(softmax_channels(naive_logits(enc, dec, p)))


# -- semi-shift route -------------------------------------------------------


def encoder_corner_padding(h: int, dy: int, dx: int) -> Padding:
    """Signed padding that puts stride-2 window centres at (2i+dy, 2j+dx).

    Negative entries mean cropping; they only occur for h == 1.
    """
    r = h // 2
    return Padding(r - dy, r - 1 + dy, r - dx, r - 1 + dx)


def pad_or_crop(x: Tensor4, padding: Padding) -> Tensor4:
    t, b, l, r = padding
    crop = x[:, :, max(-t, 0) : x.shape[2] - max(-b, 0), max(-l, 0) : x.shape[3] - max(-r, 0)]
    pos = Padding(max(t, 0), max(b, 0), max(l, 0), max(r, 0))
    if not any(pos):
        return np.ascontiguousarray(crop)
    n, c, hh, ww = crop.shape
    out = np.zeros((n, c, hh + pos.top + pos.bottom, ww + pos.left + pos.right), dtype=x.dtype)
    out[:, :, pos.top : pos.top + hh, pos.left : pos.left + ww] = crop
    return out


def _check_window(p: KernelGenParams) -> None:
    if p.h % 2 == 0:
        raise UnsupportedWindow(f"semi-shift convolution needs an odd window, got h={p.h}")


def decoder_branch(dec: Tensor4, p: KernelGenParams) -> Tensor4:
    """Compressed decoder (with compressor bias) through the content conv, stride 1, full padding.

    Includes the content bias, so it is added exactly once per corner.
    """
    z = conv1x1(dec, p.dec_compress)
    return conv2d(z, p.content, 1, Padding.uniform(p.h // 2))


def encoder_branch(enc: Tensor4, p: KernelGenParams, corner: tuple[int, int], z: Tensor4 | None = None) -> Tensor4:
    """Compressed encoder through the bias-free content conv at stride 2 for one corner."""
    if z is None:
        z = conv1x1(enc, p.enc_compress)
    zp = pad_or_crop(z, encoder_corner_padding(p.h, *corner))
    return conv2d(zp, ConvWeights(p.content.weight), 2)


def semishift_subprocess(enc: Tensor4, dec: Tensor4, p: KernelGenParams, corner: tuple[int, int]) -> Tensor4:
    """Unnormalised (n, K*K, H, W) logits for the ``corner`` member of every 2x2 output group."""
    if tuple(corner) not in CORNERS:
        raise ValueError(f"corner must be one of {CORNERS}, got {corner}")
    enc, dec = check_pair(enc, dec, p.C)
    _check_window(p)
    p = _params_as(p, enc.dtype)
    return encoder_branch(enc, p, tuple(corner)) + decoder_branch(dec, p)


def interleave(corners: dict[tuple[int, int], Tensor4]) -> Tensor4:
    """Scatter four (n, c, H, W) maps into one (n, c, 2H, 2W) map; corner (dy, dx) goes to (2i+dy, 2j+dx)."""
    n, c, h, w = corners[(0, 0)].shape
    out = np.empty((n, c, h, 2, w, 2), dtype=corners[(0, 0)].dtype)
    for (dy, dx), t in corners.items():
        out[:, :, :, dy, :, dx] = t
    return out.reshape(n, c, 2 * h, 2 * w)


def deinterleave(x: Tensor4) -> dict[tuple[int, int], Tensor4]:
    n, c, h2, w2 = x.shape
    v = x.reshape(n, c, h2 // 2, 2, w2 // 2, 2)
    return {(dy, dx): np.ascontiguousarray(v[:, :, :, dy, :, dx]) for dy, dx in CORNERS}


# Multiply-accumulate counts of each branch under both execution schedules.
# "merged" folds the compressor into the content conv (weights precomputed
# per call), "unmerged" runs the compressor then the content conv.


def branch_macs(branch: str, schedule: str, n: int, C: int, H: int, W: int, d: int, K: int, h: int) -> dict[str, int]:
    kk, hh = K * K, h * h
    if branch == "enc":
        hw = 4 * H * W
        if schedule == "merged":
            return {"enc_merge_weights": kk * hh * d * C, "enc_content": n * hw * C * kk * hh}
        return {"enc_compress": n * hw * C * d, "enc_content": n * hw * d * kk * hh}
    if branch == "dec":
        hw = H * W
        if schedule == "merged":
            return {"dec_merge_weights": kk * hh * d * (C + 1), "dec_content": n * hw * (C + 1) * kk * hh}
        return {"dec_compress": n * hw * C * d, "dec_content": n * hw * d * kk * hh}
    raise ValueError(branch)


def resolve_schedule(schedule: Schedule, n: int, C: int, H: int, W: int, d: int, K: int, h: int) -> dict[str, str]:
    """Per-branch schedule; ``auto`` picks whichever needs fewer MACs (ties go to unmerged)."""
    if schedule in ("merged", "unmerged"):
        return {"enc": schedule, "dec": schedule}
    if schedule != "auto":
        raise ValueError(f"unknown schedule {schedule!r}")
    out = {}
    for branch in ("enc", "dec"):
        cost = {
            s: sum(branch_macs(branch, s, n, C, H, W, d, K, h).values()) for s in ("unmerged", "merged")
        }
        out[branch] = "merged" if cost["merged"] < cost["unmerged"] else "unmerged"
    return out


def merged_encoder_weights(p: KernelGenParams) -> ConvWeights:
    # (K*K, d, h, h) x (d, C) -> (K*K, C, h, h)
    w = np.einsum("mlij,lk->mkij", p.content.weight, p.enc_compress.weight[:, :, 0, 0])
    return ConvWeights(np.ascontiguousarray(w))


def merged_decoder_weights(p: KernelGenParams) -> ConvWeights:
    """Content conv folded with the decoder compressor; the extra last input channel carries the compressor bias."""
    a = np.concatenate([p.dec_compress.weight[:, :, 0, 0], p.dec_compress.bias[:, None]], axis=1)
    w = np.einsum("mlij,lk->mkij", p.content.weight, a)
    return ConvWeights(np.ascontiguousarray(w), p.content.bias)


def semishift_logits(enc: Tensor4, dec: Tensor4, p: KernelGenParams, schedule: Schedule = "auto") -> Tensor4:
    """Interleaved (n, K*K, 2H, 2W) logits of the four corner sub-processes."""
    enc, dec = check_pair(enc, dec, p.C)
    _check_window(p)
    p = _params_as(p, enc.dtype)
    n, C, H, W = dec.shape
    plan = resolve_schedule(schedule, n, C, H, W, p.d, p.K, p.h)
    r = p.h // 2

    if plan["dec"] == "merged":
        ones = np.ones((n, 1, H, W), dtype=dec.dtype)
        dec_part = conv2d(concat_channels(dec, ones), merged_decoder_weights(p), 1, Padding.uniform(r))
    else:
        dec_part = decoder_branch(dec, p)

    if plan["enc"] == "merged":
        wm = merged_encoder_weights(p)
        subs = {
            c: conv2d(pad_or_crop(enc, encoder_corner_padding(p.h, *c)), wm, 2) + dec_part for c in CORNERS
        }
    else:
        z = conv1x1(enc, p.enc_compress)
        subs = {c: encoder_branch(enc, p, c, z) + dec_part for c in CORNERS}
    return interleave(subs)


def gen_kernels_semishift(enc: Tensor4, dec: Tensor4, p: KernelGenParams, schedule: Schedule = "auto") -> KernelMap:
    return KernelMap(softmax_channels(semishift_logits(enc, dec, p, schedule)))


# -- per-window reference ---------------------------------------------------


def _softmax_reference(v: np.ndarray) -> np.ndarray:
    m = max(v)
    e = [math.exp(x - m) for x in v]
    s = math.fsum(e)
    return np.array([x / s for x in e])


def oracle_logit_window(enc: np.ndarray, dec: np.ndarray, p: KernelGenParams, b: int, y: int, x: int) -> np.ndarray:
    """Unnormalised kernel at high-resolution position (y, x) of batch item ``b``.

    Window offset (u, v) reads encoder pixel (y+u, x+v) and decoder pixel
    (y//2+u, x//2+v). An out-of-range pixel contributes nothing from its
    source (zero padding of that source's compressed feature).
    """
    w_enc = p.enc_compress.weight[:, :, 0, 0].astype(np.float64)
    w_dec = p.dec_compress.weight[:, :, 0, 0].astype(np.float64)
    comp_bias = p.dec_compress.bias.astype(np.float64)
    w_content = p.content.weight.astype(np.float64)
    h = p.h
    r = h // 2
    H, W = dec.shape[2], dec.shape[3]
    w = p.content.bias.astype(np.float64).copy()
    for i in range(h):
        for j in range(h):
            ey, ex = y + i - r, x + j - r
            dy, dx = y // 2 + i - r, x // 2 + j - r
            pre = np.zeros(p.d)
            if 0 <= ey < 2 * H and 0 <= ex < 2 * W:
                pre += w_enc @ enc[b, :, ey, ex].astype(np.float64)
            if 0 <= dy < H and 0 <= dx < W:
                pre += w_dec @ dec[b, :, dy, dx].astype(np.float64) + comp_bias
            w += w_content[:, :, i, j] @ pre
    return w


def gen_kernels_oracle(enc: Tensor4, dec: Tensor4, p: KernelGenParams) -> KernelMap:
    """Slow literal evaluation of every window, float64 throughout."""
    enc, dec = check_pair(enc, dec, p.C)
    n, _, H, W = dec.shape
    out = np.empty((n, p.K * p.K, 2 * H, 2 * W))
    for b in range(n):
        for y in range(2 * H):
            for x in range(2 * W):
                out[b, :, y, x] = _softmax_reference(oracle_logit_window(enc, dec, p, b, y, x))
    return KernelMap(out)


# -- single-window forms ----------------------------------------------------


def window_logits_fused(x_en: np.ndarray, x_de: np.ndarray, p: KernelGenParams) -> np.ndarray:
    """Logits of one window from the concatenated 2C-channel features.

    ``x_en`` and ``x_de`` are (C, h, h) windows already aligned to each other.
    """
    x = np.concatenate([x_en, x_de], axis=0)  # 2C, h, h
    compress = naive_compress_weights(p)
    z = np.einsum("lk,kij->lij", compress.weight[:, :, 0, 0], x) + compress.bias[:, None, None]
    return np.einsum("mlij,lij->m", p.content.weight, z) + p.content.bias


def window_logits_split(x_en: np.ndarray, x_de: np.ndarray, p: KernelGenParams) -> np.ndarray:
    """Same window as :func:`window_logits_fused`, each source compressed separately then summed."""
    w_content = p.content.weight
    z_en = np.einsum("lk,kij->lij", p.enc_compress.weight[:, :, 0, 0], x_en)
    z_de = np.einsum("lk,kij->lij", p.dec_compress.weight[:, :, 0, 0], x_de) + p.dec_compress.bias[:, None, None]
    return np.einsum("mlij,lij->m", w_content, z_en) + np.einsum("mlij,lij->m", w_content, z_de) + p.content.bias
