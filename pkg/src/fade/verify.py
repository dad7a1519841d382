"""Invariant suite behind ``fade verify``.

Each check takes a seeded generator and returns ``(passed, detail)``.
Details contain only seed-determined numbers so reports are reproducible.
"""
from __future__ import annotations

import math
import os
import tempfile
from typing import Callable

import numpy as np

from . import ften
from .autograd import nn_interpolate_x2_vjp, softmax_channels_vjp
from .errors import BadMagic, TruncatedFile
from .kernel_gen import (
    CORNERS,
    KernelGenParams,
    KernelMap,
    gen_kernels_naive,
    gen_kernels_oracle,
    gen_kernels_semishift,
    window_logits_fused,
    window_logits_split,
)
from .oracles import MacCounter, conv2d_loops, maxpool_loops, reassemble_loops
from .profiler import KINDS, count_flops, make_grid
from .rng import SplitMix64
from .tensor_core import (
    ConvWeights,
    Padding,
    bilinear_x2,
    concat_channels,
    conv1x1,
    conv2d,
    maxpool_x2,
    nn_interpolate_x2,
    pad2d,
    sigmoid_map,
    softmax_channels,
)
from .upsample import (
    FadeParams,
    GateParams,
    KernelPredictorParams,
    carafe_kernels,
    encoder_only_kernels,
    fade_forward,
    gate_generate,
    gated_blend,
    one_hot_center_kernels,
    reassemble,
)

Check = Callable[[SplitMix64], "tuple[bool, str]"]
CHECKS: dict[str, Check] = {}


def check(name: str):
    def register(fn):
        CHECKS[name] = fn
        return fn

    return register


def _dims(rng, lo, hi, k):
    return [int(v) for v in rng.integers(lo, hi + 1, (k,))]


def _pair(rng, C, H, W, n=1, dtype=np.float32):
    return rng.normal((n, C, 2 * H, 2 * W), dtype), rng.normal((n, C, H, W), dtype)


def _interior_groups(k: np.ndarray) -> np.ndarray:
    """Kernel groups (n, KK, H-2, 2, W-2, 2) whose corner windows lie fully inside the encoder."""
    n, kk, h2, w2 = k.shape
    g = k.reshape(n, kk, h2 // 2, 2, w2 // 2, 2)
    return g[:, :, 1:-1, :, 1:-1, :]


# -- tensor core ------------------------------------------------------------


@check("conv2d matches nested-loop oracle (20 trials)")
def _(rng):
    worst = 0.0
    for _ in range(20):
        n, c, co, h, w = _dims(rng, 1, 2, 1) + _dims(rng, 1, 4, 2) + _dims(rng, 3, 8, 2)
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = Padding(*_dims(rng, 0, 1, 4))
        span_h, span_w = h + pad.top + pad.bottom - k, w + pad.left + pad.right - k
        if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
            stride = 1
            if span_h < 0 or span_w < 0:
                pad = Padding.uniform(k // 2)
        x = rng.normal((n, c, h, w), np.float32)
        wt = ConvWeights(rng.normal((co, c, k, k), np.float32), rng.normal((co,), np.float32))
        got = conv2d(x, wt, stride, pad)
        ref = conv2d_loops(x, wt.weight, wt.bias, stride, pad)
        worst = max(worst, float(np.abs(got - ref).max()))
    return worst <= 1e-5, f"max abs diff {worst:.3e} (tol 1e-5)"


@check("conv2d is linear in its input")
def _(rng):
    x, y = rng.normal((2, 3, 6, 6), np.float32), rng.normal((2, 3, 6, 6), np.float32)
    wt = ConvWeights(rng.normal((4, 3, 3, 3), np.float32))
    a, b = 1.5, -0.75
    lhs = conv2d(a * x + b * y, wt, 1, Padding.uniform(1))
    rhs = a * conv2d(x, wt, 1, Padding.uniform(1)) + b * conv2d(y, wt, 1, Padding.uniform(1))
    err = float(np.abs(lhs - rhs).max())
    return err <= 1e-5, f"max abs diff {err:.3e}"


@check("conv2d MAC formula equals instrumented loop count")
def _(rng):
    x = rng.normal((1, 2, 5, 4), np.float32)
    wt = rng.normal((3, 2, 3, 3), np.float32)
    counter = MacCounter()
    conv2d_loops(x, wt, None, 1, (1, 1, 1, 1), counter)
    formula = 1 * 3 * 5 * 4 * 2 * 3 * 3
    return counter.count == formula, f"loop {counter.count}, formula {formula}"


@check("pad2d keeps interior, zero border, preserves sum")
def _(rng):
    x = rng.normal((2, 3, 4, 5))
    p = Padding(1, 2, 0, 3)
    y = pad2d(x, p)
    ok = y.shape == (2, 3, 7, 8) and np.array_equal(y[:, :, 1:5, 0:5], x)
    ok &= bool(np.all(y[:, :, 0] == 0) and np.all(y[:, :, :, 5:] == 0))
    ok &= math.isclose(y.sum(), x.sum(), rel_tol=1e-12, abs_tol=1e-12)
    return bool(ok), f"shape {y.shape}"


@check("maxpool_x2 after nn_interpolate_x2 is the identity")
def _(rng):
    x = rng.normal((2, 3, 5, 4), np.float32)
    return bool(np.array_equal(maxpool_x2(nn_interpolate_x2(x)), x)), "exact"


@check("nn_interpolate_x2 blocks have zero variance")
def _(rng):
    y = nn_interpolate_x2(rng.normal((2, 3, 4, 5), np.float32))
    v = y.reshape(2, 3, 4, 2, 5, 2).var(axis=(3, 5)).max()
    return bool(v == 0), f"max block variance {v}"


@check("bilinear_x2 sample-point formula and constant preservation")
def _(rng):
    r = bilinear_x2(np.array([[[[0.0, 1.0]]]]))
    ok = np.allclose(r, [[[[0, 0.25, 0.75, 1]]]], atol=0)
    c = bilinear_x2(np.full((1, 2, 3, 3), 2.5, np.float32))
    ok &= bool(np.all(c == 2.5))
    x = rng.normal((1, 2, 6, 6), np.float32)
    rel = abs(bilinear_x2(x).mean() - x.mean()) / max(abs(x).mean(), 1e-12)
    return bool(ok) and rel <= 0.05, f"[[0,1]] -> {r[0, 0, 0].tolist()}, mean drift {rel:.3e}"


@check("maxpool_x2 matches loop oracle")
def _(rng):
    x = rng.normal((2, 3, 6, 4), np.float32)
    return bool(np.array_equal(maxpool_x2(x), maxpool_loops(x))), "exact"


@check("softmax_channels closed form, normalisation and shift invariance")
def _(rng):
    two = softmax_channels(np.array([0.0, math.log(3.0)]).reshape(1, 2, 1, 1)).ravel()
    ok = np.allclose(two, [0.25, 0.75], atol=1e-12)
    x = rng.normal((2, 7, 4, 4), np.float32)
    y = softmax_channels(x)
    norm = float(np.abs(y.sum(axis=1) - 1).max())
    shift = rng.normal((2, 1, 4, 4), np.float32) * 5
    inv = float(np.abs(softmax_channels(x + shift) - y).max())
    return bool(ok) and norm <= 1e-5 and inv <= 1e-6, f"(0, ln3) -> {two.tolist()}, sum err {norm:.2e}, shift diff {inv:.2e}"


@check("sigmoid_map symmetry and saturation")
def _(rng):
    x = rng.normal((2, 3, 4, 4)) * 5
    sym = float(np.abs(sigmoid_map(x) + sigmoid_map(-x) - 1).max())
    sat = sigmoid_map(np.array([30.0, -30.0, 0.0]).reshape(1, 1, 1, 3)).ravel()
    ok = sym <= 1e-6 and 1 - sat[0] <= 1e-9 and sat[1] <= 1e-9 and sat[2] == 0.5
    return bool(ok), f"symmetry err {sym:.2e}"


@check("FTEN round trip is bit exact; bad magic and truncation detected")
def _(rng):
    t = rng.normal((2, 3, 4, 5), np.float32)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "t.ften")
        ften.write_tensor(path, t)
        back = ften.read_tensor(path)
    ok = back.tobytes() == t.tobytes() and back.shape == t.shape
    buf = ften.encode_tensor(t)
    try:
        ften.decode_tensor(b"XTEN" + buf[4:])
        ok = False
    except BadMagic:
        pass
    try:
        ften.decode_tensor(buf[: ften.HEADER.size + 100 * 4])
        ok = False
    except TruncatedFile:
        pass
    return bool(ok), "round trip + error paths"


# -- kernel generation ------------------------------------------------------


@check("semi-shift kernels equal per-window oracle (20 trials)")
def _(rng):
    worst = 0.0
    for t in range(20):
        C = (3, 8, 16)[t % 3]
        H, W = _dims(rng, 3, 8, 2)
        p = KernelGenParams.init(C, seed=rng)
        enc, dec = _pair(rng, C, H, W)
        diff = np.abs(gen_kernels_semishift(enc, dec, p).tensor - gen_kernels_oracle(enc, dec, p).tensor).max()
        worst = max(worst, float(diff))
    return worst <= 1e-5, f"max abs diff {worst:.3e} (tol 1e-5)"


@check("fused and split window forms agree (linearity, float64)")
def _(rng):
    worst = 0.0
    for _ in range(50):
        C = int(rng.integers(1, 9))
        p = KernelGenParams.init(C, d=16, seed=rng, dtype=np.float64)
        x_en, x_de = rng.normal((C, 3, 3)), rng.normal((C, 3, 3))
        worst = max(worst, float(np.abs(window_logits_fused(x_en, x_de, p) - window_logits_split(x_en, x_de, p)).max()))
    return worst <= 1e-10, f"max abs diff {worst:.3e} (tol 1e-10)"


@check("every kernel map is normalised with entries in [0, 1]")
def _(rng):
    worst = 0.0
    ok = True
    enc, dec = _pair(rng, 4, 4, 5)
    kg = KernelGenParams.init(4, d=8, seed=rng)
    maps = [
        gen_kernels_semishift(enc, dec, kg), gen_kernels_naive(enc, dec, kg),
        carafe_kernels(dec, KernelPredictorParams.init(4, d=8, shuffle=True, seed=rng)),
        encoder_only_kernels(enc, KernelPredictorParams.init(4, d=8, seed=rng)),
    ]
    for km in maps:
        worst = max(worst, km.max_normalization_error())
        ok &= bool(np.all(km.tensor >= 0) and np.all(km.tensor <= 1))
    return ok and worst <= 1e-5, f"max |sum - 1| {worst:.2e}"


@check("constant encoder gives identical kernels within each interior 2x2 group")
def _(rng):
    C, H, W = 4, 6, 5
    _, dec = _pair(rng, C, H, W)
    enc = np.broadcast_to(rng.normal((1, C, 1, 1), np.float32), (1, C, 2 * H, 2 * W)).copy()
    g = _interior_groups(gen_kernels_semishift(enc, dec, KernelGenParams.init(C, d=8, seed=rng)).tensor)
    ref = g[:, :, :, :1, :, :1]
    same = bool(np.all(g == ref))
    return same, f"bitwise equal over {g.shape[2] * g.shape[4]} interior groups"


@check("decoder pixels outside the 3x3 window leave a group's kernels unchanged")
def _(rng):
    C, H, W = 3, 6, 6
    enc, dec = _pair(rng, C, H, W)
    p = KernelGenParams.init(C, d=8, seed=rng)
    base = gen_kernels_semishift(enc, dec, p).tensor
    dec2 = dec.copy()
    dec2[:, :, 4, 5] += 10.0
    moved = gen_kernels_semishift(enc, dec2, p).tensor
    grp = (slice(None), slice(None), slice(2 * 1, 2 * 1 + 2), slice(2 * 2, 2 * 2 + 2))  # group (1, 2)
    diff = float(np.abs(moved[grp] - base[grp]).max())
    return diff == 0.0, f"group (1,2) change {diff}"


@check("naive kernels equal step-by-step primitive composition")
def _(rng):
    C = 4
    enc, dec = _pair(rng, C, 3, 3)
    p = KernelGenParams.init(C, d=8, seed=rng)
    x = concat_channels(enc, nn_interpolate_x2(dec))
    w = ConvWeights(np.concatenate([p.enc_compress.weight, p.dec_compress.weight], 1), p.dec_compress.bias)
    ref = softmax_channels(conv2d(conv1x1(x, w), p.content, 1, Padding.uniform(1)))
    err = float(np.abs(gen_kernels_naive(enc, dec, p).tensor - ref).max())
    return err <= 1e-5, f"max abs diff {err:.3e}"


@check("merged and unmerged semi-shift schedules agree")
def _(rng):
    C = 5
    enc, dec = _pair(rng, C, 4, 4)
    p = KernelGenParams.init(C, d=8, seed=rng)
    a = gen_kernels_semishift(enc, dec, p, "merged").tensor
    b = gen_kernels_semishift(enc, dec, p, "unmerged").tensor
    err = float(np.abs(a - b).max())
    return err <= 1e-5, f"max abs diff {err:.3e}"


# -- upsampling -------------------------------------------------------------


@check("reassemble matches loop oracle")
def _(rng):
    dec = rng.normal((2, 3, 4, 4), np.float32)
    k = KernelMap(softmax_channels(rng.normal((2, 25, 8, 8), np.float32)))
    err = float(np.abs(reassemble(dec, k) - reassemble_loops(dec, k.tensor)).max())
    return err <= 1e-5, f"max abs diff {err:.3e}"


@check("one-hot centre kernels reproduce NN interpolation exactly")
def _(rng):
    dec = rng.normal((2, 3, 4, 5), np.float32)
    out = reassemble(dec, one_hot_center_kernels(2, 5, 8, 10))
    return bool(np.array_equal(out, nn_interpolate_x2(dec))), "exact"


@check("reassemble is linear in decoder and in kernels")
def _(rng):
    d1, d2 = rng.normal((1, 2, 4, 4), np.float32), rng.normal((1, 2, 4, 4), np.float32)
    k1 = softmax_channels(rng.normal((1, 9, 8, 8), np.float32))
    k2 = softmax_channels(rng.normal((1, 9, 8, 8), np.float32))
    r = lambda d, k: reassemble(d, KernelMap(k))  # noqa: E731
    e1 = float(np.abs(r(2 * d1 - d2, k1) - (2 * r(d1, k1) - r(d2, k1))).max())
    e2 = float(np.abs(r(d1, 0.3 * k1 + 0.7 * k2) - (0.3 * r(d1, k1) + 0.7 * r(d1, k2))).max())
    return max(e1, e2) <= 1e-5, f"decoder {e1:.2e}, kernels {e2:.2e}"


@check("normalised reassembly is affine-equivariant away from borders")
def _(rng):
    dec = rng.normal((1, 2, 8, 8), np.float32)
    k = KernelMap(softmax_channels(rng.normal((1, 25, 16, 16), np.float32)))
    a, b = 1.7, -0.4
    lhs = reassemble(a * dec + b, k)[:, :, 4:-4, 4:-4]
    rhs = (a * reassemble(dec, k) + b)[:, :, 4:-4, 4:-4]
    err = float(np.abs(lhs - rhs).max())
    return err <= 1e-5, f"interior max abs diff {err:.2e}"


@check("gate blend identities: G=0 gives pre, G=1 gives enc, G=0.5 with enc=-pre gives 0")
def _(rng):
    enc, pre = rng.normal((2, 3, 4, 4), np.float32), rng.normal((2, 3, 4, 4), np.float32)
    z, o = np.zeros((2, 1, 4, 4), np.float32), np.ones((2, 1, 4, 4), np.float32)
    ok = np.array_equal(gated_blend(enc, pre, z), pre) and np.array_equal(gated_blend(enc, pre, o), enc)
    ok &= bool(np.all(gated_blend(-pre, pre, 0.5 * o) == 0))
    return bool(ok), "exact"


@check("gate map is constant on 2x2 blocks and inside (0, 1)")
def _(rng):
    dec = rng.normal((2, 3, 4, 5), np.float32)
    g = gate_generate(dec, GateParams.init(3, seed=rng)).tensor
    v = g.reshape(2, 1, 4, 2, 5, 2).var(axis=(3, 5)).max()
    return bool(v == 0 and np.all(g > 0) and np.all(g < 1)), f"max block variance {v}"


@check("gate broadcast: permuting channels permutes the blend")
def _(rng):
    enc, pre = rng.normal((1, 4, 4, 4), np.float32), rng.normal((1, 4, 4, 4), np.float32)
    g = sigmoid_map(rng.normal((1, 1, 4, 4), np.float32))
    perm = [2, 0, 3, 1]
    ok = np.array_equal(gated_blend(enc, pre, g)[:, perm], gated_blend(enc[:, perm], pre[:, perm], g))
    return bool(ok), "exact"


@check("fade_forward equals composition of its primitives")
def _(rng):
    C = 3
    enc, dec = _pair(rng, C, 4, 4)
    fp = FadeParams.init(C, d=8, seed=rng)
    k = gen_kernels_semishift(enc, dec, fp.kernel_gen)
    ref = gated_blend(enc, reassemble(dec, k), gate_generate(dec, fp.gate))
    return bool(np.array_equal(fade_forward(enc, dec, fp), ref)), "bit-identical"


@check("operators are deterministic")
def _(rng):
    C = 3
    enc, dec = _pair(rng, C, 4, 4)
    fp = FadeParams.init(C, d=8, seed=rng)
    a, b = fade_forward(enc, dec, fp), fade_forward(enc.copy(), dec.copy(), fp)
    return bool(np.array_equal(a, b)), "bit-identical"


# -- gradients --------------------------------------------------------------


@check("softmax VJP of a constant cotangent sums to zero per position")
def _(rng):
    y = softmax_channels(rng.normal((2, 9, 3, 3)))
    g = softmax_channels_vjp(y, np.ones_like(y) * 3.0)
    s = float(np.abs(g.sum(axis=1)).max())
    return s <= 1e-12, f"max |sum| {s:.2e}"


@check("nn_interpolate_x2 VJP is the exact 2x2 block sum")
def _(rng):
    g = rng.integers(-5, 6, (2, 3, 6, 8)).astype(np.float64)
    ref = np.zeros((2, 3, 3, 4))
    for a in (0, 1):
        for b in (0, 1):
            ref += g[:, :, a::2, b::2]
    return bool(np.array_equal(nn_interpolate_x2_vjp(g), ref)), "exact integers"


@check("gradient certification for gated fade_forward (float64)")
def _(rng):
    from .autograd import certify

    seed = int(rng.integers(0, 2**31))
    err = certify("fade_forward", seed)
    return err <= 1e-5, f"max rel err {err:.2e} (tol 1e-5)"


# -- cost model -------------------------------------------------------------


@check("semi-shift beats naive in FLOPs and peak bytes on every bench grid")
def _(rng):
    worst = 0.0
    for name in ("fig9a", "fig9b", "fig9c"):
        for desc in make_grid(name, kinds=("fade_naive",)):
            n = count_flops(desc)
            s = count_flops(type(desc)(**{**desc.__dict__, "kind": "fade_semishift"}))
            if not (s.flops < n.flops and s.peak_bytes < n.peak_bytes and s.macs < n.macs):
                return False, f"fails at C={desc.C} H={desc.H}"
            worst = max(worst, s.flops / n.flops)
    return True, f"worst FLOP ratio {worst:.3f}"


@check("FLOPs are non-decreasing in channels at 112x112")
def _(rng):
    for kind in KINDS:
        flops = [count_flops(d).flops for d in make_grid("fig9a", kinds=(kind,))]
        if any(b < a for a, b in zip(flops, flops[1:])):
            return False, kind
    return True, f"{len(KINDS)} operator kinds"


def run_all(seed: int = 42, names: list[str] | None = None) -> list[tuple[str, bool, str]]:
    results = []
    for i, (name, fn) in enumerate(CHECKS.items()):
        if names is not None and name not in names:
            continue
        rng = SplitMix64(seed).spawn(i)
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
