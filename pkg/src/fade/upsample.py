"""Kernel reassembly, gated refinement and the full x2 upsampling operator.

Besides the full operator this module carries the baselines used by the
ablation harness: decoder-only kernels (CARAFE style, pixel shuffle) and
encoder-only kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ChannelMismatch, ShapeMismatch, UnnormalizedKernels
from .kernel_gen import (
    KernelGenParams,
    KernelMap,
    Schedule,
    check_pair,
    gen_kernels_naive,
    gen_kernels_semishift,
    init_conv,
)
from .rng import SplitMix64
from .tensor_core import (
    ConvWeights,
    Padding,
    Tensor4,
    as_tensor4,
    conv1x1,
    conv2d,
    nn_interpolate_x2,
    pad2d,
    pixel_shuffle,
    sigmoid_map,
    softmax_channels,
)

FusionMode = Literal["none", "skipping", "gating"]
FUSION_MODES = ("none", "skipping", "gating")


@dataclass
class GateMap:
    tensor: Tensor4  # (n, 1, 2H, 2W), values in (0, 1)


@dataclass
class GateParams:
    conv: ConvWeights  # 1x1, C -> 1, with bias

    def __post_init__(self):
        if self.conv.c_out != 1 or self.conv.kernel_size != (1, 1) or self.conv.bias is None:
            raise ShapeMismatch("gate conv must be 1x1, C -> 1, with bias")

    @classmethod
    def init(cls, C: int, seed: int | SplitMix64 = 0, dtype=np.float32) -> "GateParams":
        rng = seed if isinstance(seed, SplitMix64) else SplitMix64(seed)
        return cls(init_conv(rng, 1, C, 1, dtype=dtype))

    @classmethod
    def zeros(cls, C: int, bias: float = 0.0, dtype=np.float32) -> "GateParams":
        return cls(ConvWeights(np.zeros((1, C, 1, 1), dtype), np.full(1, bias, dtype)))


@dataclass
class FadeParams:
    kernel_gen: KernelGenParams
    gate: GateParams
    fusion_mode: FusionMode = "gating"

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.gate.conv.c_in != self.kernel_gen.C:
            raise ChannelMismatch("gate and kernel generator disagree on channel count")

    @property
    def use_gate(self) -> bool:
        return self.fusion_mode == "gating"

    @classmethod
    def init(cls, C: int, d: int = 64, K: int = 5, h: int = 3, fusion_mode: FusionMode = "gating",
             seed: int | SplitMix64 = 0, dtype=np.float32) -> "FadeParams":
        rng = seed if isinstance(seed, SplitMix64) else SplitMix64(seed)
        kg = KernelGenParams.init(C, d, K, h, rng, dtype)
        return cls(kg, GateParams.init(C, rng, dtype), fusion_mode)

    def as_dict(self) -> dict[str, np.ndarray]:
        out = self.kernel_gen.as_dict()
        out["gate.weight"] = self.gate.conv.weight
        out["gate.bias"] = self.gate.conv.bias
        return out

    @classmethod
    def from_dict(cls, p: dict[str, np.ndarray], fusion_mode: FusionMode = "gating") -> "FadeParams":
        gate = GateParams(ConvWeights(p["gate.weight"], p["gate.bias"]))
        return cls(KernelGenParams.from_dict(p), gate, fusion_mode)

    def astype(self, dtype) -> "FadeParams":
        return FadeParams.from_dict({k: v.astype(dtype) for k, v in self.as_dict().items()}, self.fusion_mode)


@dataclass
class KernelPredictorParams:
    """Compressor plus content encoder for the single-source baselines.

    The content conv outputs K*K channels (encoder-only) or 4*K*K channels
    that are pixel-shuffled to high resolution (decoder-only).
    """

    compress: ConvWeights
    content: ConvWeights
    K: int = field(default=5)

    @classmethod
    def init(cls, C: int, d: int = 64, K: int = 5, h: int = 3, shuffle: bool = False,
             seed: int | SplitMix64 = 0, dtype=np.float32) -> "KernelPredictorParams":
        rng = seed if isinstance(seed, SplitMix64) else SplitMix64(seed)
        out = K * K * (4 if shuffle else 1)
        return cls(init_conv(rng, d, C, 1, dtype=dtype), init_conv(rng, out, d, h, dtype=dtype), K)

    @classmethod
    def zeros(cls, C: int, d: int = 64, K: int = 5, h: int = 3, shuffle: bool = False, dtype=np.float32):
        out = K * K * (4 if shuffle else 1)
        return cls(
            ConvWeights(np.zeros((d, C, 1, 1), dtype), np.zeros(d, dtype)),
            ConvWeights(np.zeros((out, d, h, h), dtype), np.zeros(out, dtype)),
            K,
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "compress.weight": self.compress.weight,
            "compress.bias": self.compress.bias,
            "content.weight": self.content.weight,
            "content.bias": self.content.bias,
        }

    @classmethod
    def from_dict(cls, p: dict[str, np.ndarray], K: int) -> "KernelPredictorParams":
        return cls(
            ConvWeights(p["compress.weight"], p["compress.bias"]),
            ConvWeights(p["content.weight"], p["content.bias"]),
            K,
        )


# -- reassembly -------------------------------------------------------------


def decoder_windows(dec: Tensor4, K: int) -> np.ndarray:
    """Zero-padded K x K neighbourhoods of every decoder pixel as (n, c, H, W, K*K)."""
    n, c, h, w = dec.shape
    win = sliding_window_view(pad2d(dec, Padding.uniform(K // 2)), (K, K), axis=(2, 3))
    return win.reshape(n, c, h, w, K * K)


def reassemble(dec: Tensor4, kernels: KernelMap) -> Tensor4:
    """Kernel-weighted sum of the K x K decoder window anchored at (y//2, x//2)."""
    if not kernels.normalized:
        raise UnnormalizedKernels("reassembly expects softmax-normalised kernels")
    dec = as_tensor4(dec, "dec")
    k = kernels.tensor
    n, c, h, w = dec.shape
    K = kernels.K
    if k.shape != (n, K * K, 2 * h, 2 * w):
        raise ShapeMismatch(f"kernel map {k.shape} does not match decoder {dec.shape}")
    win = decoder_windows(dec, K).transpose(0, 2, 3, 1, 4)  # n, H, W, c, KK
    ker = k.astype(dec.dtype, copy=False).reshape(n, K * K, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5)
    out = np.matmul(win, ker.reshape(n, h, w, K * K, 4))  # n, H, W, c, 4
    out = out.reshape(n, h, w, c, 2, 2).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(out.reshape(n, c, 2 * h, 2 * w))


# -- gating -----------------------------------------------------------------


def gate_generate(dec: Tensor4, gp: GateParams) -> GateMap:
    dec = as_tensor4(dec, "dec")
    if dec.shape[1] != gp.conv.c_in:
        raise ChannelMismatch(f"decoder has {dec.shape[1]} channels, gate expects {gp.conv.c_in}")
    return GateMap(sigmoid_map(nn_interpolate_x2(conv1x1(dec, gp.conv.astype(dec.dtype)))))


def gated_blend(enc: Tensor4, pre: Tensor4, g: GateMap | Tensor4) -> Tensor4:
    """enc * G + pre * (1 - G) with the single-channel gate broadcast over channels."""
    gt = g.tensor if isinstance(g, GateMap) else g
    if enc.shape != pre.shape:
        raise ShapeMismatch(f"encoder {enc.shape} and pre-upsampled {pre.shape} differ")
    n, _, h, w = enc.shape
    if gt.shape != (n, 1, h, w):
        raise ShapeMismatch(f"gate map must be {(n, 1, h, w)}, got {gt.shape}")
    return enc * gt + pre * (1 - gt)


# -- operators --------------------------------------------------------------


def fade_forward(enc: Tensor4, dec: Tensor4, fp: FadeParams, route: str = "semishift",
                 schedule: Schedule = "auto") -> Tensor4:
    enc, dec = check_pair(enc, dec, fp.kernel_gen.C)
    if route == "semishift":
        kernels = gen_kernels_semishift(enc, dec, fp.kernel_gen, schedule)
    elif route == "naive":
        kernels = gen_kernels_naive(enc, dec, fp.kernel_gen)
    else:
        raise ValueError(f"unknown kernel route {route!r}")
    pre = reassemble(dec, kernels)
    if fp.fusion_mode == "none":
        return pre
    if fp.fusion_mode == "skipping":
        return enc + pre
    return gated_blend(enc, pre, gate_generate(dec, fp.gate))


def _as_dtype(w: ConvWeights, dtype) -> ConvWeights:
    return w if w.weight.dtype == dtype else w.astype(dtype)


def carafe_logits(dec: Tensor4, params: KernelPredictorParams) -> Tensor4:
    dec = as_tensor4(dec, "dec")
    if dec.shape[1] != params.compress.c_in:
        raise ChannelMismatch(f"decoder has {dec.shape[1]} channels, compressor expects {params.compress.c_in}")
    if params.content.c_out != 4 * params.K ** 2:
        raise ShapeMismatch("decoder-only content conv must output 4*K*K channels")
    h = params.content.kernel_size[0]
    z = conv1x1(dec, _as_dtype(params.compress, dec.dtype))
    z = conv2d(z, _as_dtype(params.content, dec.dtype), 1, Padding.uniform(h // 2))
    return pixel_shuffle(z, 2)


def carafe_kernels(dec: Tensor4, params: KernelPredictorParams) -> KernelMap:
    return KernelMap(softmax_channels(carafe_logits(dec, params)))


def carafe_forward(dec: Tensor4, params: KernelPredictorParams) -> Tensor4:
    """Decoder-only baseline: kernels predicted from the decoder alone."""
    return reassemble(dec, carafe_kernels(dec, params))


def encoder_only_logits(enc: Tensor4, params: KernelPredictorParams) -> Tensor4:
    enc = as_tensor4(enc, "enc")
    if enc.shape[1] != params.compress.c_in:
        raise ChannelMismatch(f"encoder has {enc.shape[1]} channels, compressor expects {params.compress.c_in}")
    if params.content.c_out != params.K ** 2:
        raise ShapeMismatch("encoder-only content conv must output K*K channels")
    if enc.shape[2] % 2 or enc.shape[3] % 2:
        raise ShapeMismatch(f"encoder spatial dims must be even, got {enc.shape[2:]}")
    h = params.content.kernel_size[0]
    z = conv1x1(enc, _as_dtype(params.compress, enc.dtype))
    return conv2d(z, _as_dtype(params.content, enc.dtype), 1, Padding.uniform(h // 2))


def encoder_only_kernels(enc: Tensor4, params: KernelPredictorParams) -> KernelMap:
    return KernelMap(softmax_channels(encoder_only_logits(enc, params)))


def encoder_only_forward(enc: Tensor4, dec: Tensor4, params: KernelPredictorParams) -> Tensor4:
    enc, dec = check_pair(enc, dec)
    return reassemble(dec, encoder_only_kernels(enc, params))


def uniform_kernels(n: int, K: int, h2: int, w2: int, dtype=np.float32) -> KernelMap:
    return KernelMap(np.full((n, K * K, h2, w2), 1.0 / (K * K), dtype=dtype))


def one_hot_center_kernels(n: int, K: int, h2: int, w2: int, dtype=np.float32) -> KernelMap:
    k = np.zeros((n, K * K, h2, w2), dtype=dtype)
    k[:, (K * K) // 2] = 1
    return KernelMap(k)
