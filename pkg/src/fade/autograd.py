"""Reverse-mode gradients for the operator graph.

There is no tape. Each primitive has a hand-written vector-Jacobian product
and each composite operator re-runs its forward pass, keeps the
intermediates it needs and applies the primitive VJPs in reverse order.

``OPS`` registers every differentiable op under a string id with a uniform
calling convention (``inputs`` and ``params`` are dicts of arrays) so
:func:`vjp` and :func:`finite_diff_check` can treat them alike.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import faults
from .errors import NonFiniteGradient, ShapeMismatch, UnknownOp
from .kernel_gen import (
    CORNERS,
    KernelGenParams,
    KernelMap,
    check_pair,
    deinterleave,
    encoder_corner_padding,
    interleave,
    pad_or_crop,
)
from .rng import SplitMix64
from .tensor_core import (
    ConvWeights,
    Padding,
    Tensor4,
    block_sum_x2,
    conv1x1,
    conv2d,
    conv_output_size,
    im2col,
    nn_interpolate_x2,
    pad2d,
    pixel_shuffle,
    pixel_unshuffle,
    sigmoid_map,
    softmax_channels,
    unpad2d,
)
from .upsample import (
    FadeParams,
    GateParams,
    KernelPredictorParams,
    decoder_windows,
    gated_blend,
    reassemble,
)


@dataclass
class GradBundle:
    """Cotangents keyed like the primal inputs and parameters they belong to."""

    inputs: dict[str, np.ndarray] = field(default_factory=dict)
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def all(self) -> dict[str, np.ndarray]:
        return {**{f"input:{k}": v for k, v in self.inputs.items()},
                **{f"param:{k}": v for k, v in self.params.items()}}


# -- primitive VJPs ---------------------------------------------------------


def conv2d_vjp(x: Tensor4, weights: ConvWeights, stride: int, padding: Padding, g: Tensor4):
    """Returns (dx, dweight, dbias); dbias is None for bias-free weights."""
    n, c, h, w = x.shape
    kh, kw = weights.kernel_size
    padding = Padding(*padding)
    ho = conv_output_size(h, padding.top, padding.bottom, kh, stride)
    wo = conv_output_size(w, padding.left, padding.right, kw, stride)
    xp = pad2d(x, padding) if any(padding) else x
    cols = im2col(xp, kh, kw, stride).reshape(n * ho * wo, c * kh * kw)
    gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, weights.c_out)
    dw = (gm.T @ cols).reshape(weights.weight.shape)
    if faults.active("vjp"):
        dw = -dw
    db = gm.sum(axis=0) if weights.bias is not None else None
    dcols = (gm @ weights.weight.reshape(weights.c_out, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros(xp.shape, dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    dx = unpad2d(dxp, padding) if any(padding) else dxp
    return dx, dw, db


def nn_interpolate_x2_vjp(g: Tensor4) -> Tensor4:
    return block_sum_x2(g)


def softmax_channels_vjp(y: Tensor4, g: Tensor4) -> Tensor4:
    return y * (g - (y * g).sum(axis=1, keepdims=True))


def sigmoid_map_vjp(y: Tensor4, g: Tensor4) -> Tensor4:
    return g * y * (1 - y)


def pad_or_crop_vjp(g: Tensor4, padding: Padding) -> Tensor4:
    return pad_or_crop(g, Padding(*(-v for v in padding)))


def reassemble_vjp(dec: Tensor4, kernels: Tensor4, g: Tensor4):
    """Returns (ddec, dkernels)."""
    n, c, h, w = dec.shape
    kk = kernels.shape[1]
    K = int(round(kk ** 0.5))
    win = decoder_windows(dec, K)  # n, c, H, W, KK
    gb = g.reshape(n, c, h, 2, w, 2)
    # dkernels[n, k, h, a, w, b] = sum_c g[n, c, h, a, w, b] * win[n, c, h, w, k]
    dk = np.einsum("nchawb,nchwk->nkhawb", gb, win, optimize=True).reshape(kernels.shape)
    kb = kernels.reshape(n, kk, h, 2, w, 2)
    dwin = np.einsum("nchawb,nkhawb->nchwk", gb, kb, optimize=True).reshape(n, c, h, w, K, K)
    r = K // 2
    dpad = np.zeros((n, c, h + 2 * r, w + 2 * r), dtype=g.dtype)
    for u in range(K):
        for v in range(K):
            dpad[:, :, u : u + h, v : v + w] += dwin[..., u, v]
    return unpad2d(dpad, Padding.uniform(r)), dk


def gated_blend_vjp(enc: Tensor4, pre: Tensor4, gate: Tensor4, g: Tensor4):
    """Returns (denc, dpre, dgate); the gate gradient is summed over channels."""
    return g * gate, g * (1 - gate), ((enc - pre) * g).sum(axis=1, keepdims=True)


# -- composite VJPs ---------------------------------------------------------


def _acc(d: dict, key: str, value: np.ndarray) -> None:
    d[key] = d[key] + value if key in d else value


def semishift_forward(enc: Tensor4, dec: Tensor4, p: KernelGenParams):
    """Normalised kernels plus the intermediates :func:`semishift_backward` needs."""
    enc, dec = check_pair(enc, dec, p.C)
    r = p.h // 2
    content_nb = ConvWeights(p.content.weight)
    z_dec = conv1x1(dec, p.dec_compress)
    dec_part = conv2d(z_dec, p.content, 1, Padding.uniform(r))
    z_enc = conv1x1(enc, p.enc_compress)
    padded = {c: pad_or_crop(z_enc, encoder_corner_padding(p.h, *c)) for c in CORNERS}
    subs = {c: conv2d(padded[c], content_nb, 2) + dec_part for c in CORNERS}
    kernels = softmax_channels(interleave(subs))
    return kernels, (enc, dec, p, z_dec, z_enc, padded, kernels)


def semishift_backward(cache, g_kernels: Tensor4) -> GradBundle:
    enc, dec, p, z_dec, z_enc, padded, kernels = cache
    r = p.h // 2
    content_nb = ConvWeights(p.content.weight)
    grads: dict[str, np.ndarray] = {}
    g_logits = deinterleave(softmax_channels_vjp(kernels, g_kernels))
    g_dec_part = sum(g_logits[c] for c in CORNERS)
    g_zenc = np.zeros_like(z_enc)
    for c in CORNERS:
        dzp, dw, _ = conv2d_vjp(padded[c], content_nb, 2, Padding(), g_logits[c])
        _acc(grads, "content.weight", dw)
        g_zenc += pad_or_crop_vjp(dzp, encoder_corner_padding(p.h, *c))
    dzd, dw, db = conv2d_vjp(z_dec, p.content, 1, Padding.uniform(r), g_dec_part)
    _acc(grads, "content.weight", dw)
    grads["content.bias"] = db
    ddec, grads["dec_compress.weight"], grads["dec_compress.bias"] = conv2d_vjp(dec, p.dec_compress, 1, Padding(), dzd)
    denc, grads["enc_compress.weight"], _ = conv2d_vjp(enc, p.enc_compress, 1, Padding(), g_zenc)
    return GradBundle({"enc": denc, "dec": ddec}, grads)


def semishift_value_and_vjp(enc: Tensor4, dec: Tensor4, p: KernelGenParams, g_kernels: Tensor4):
    kernels, cache = semishift_forward(enc, dec, p)
    return kernels, semishift_backward(cache, g_kernels)


def fade_forward_cached(enc: Tensor4, dec: Tensor4, fp: FadeParams):
    enc, dec = check_pair(enc, dec, fp.kernel_gen.C)
    kernels, kcache = semishift_forward(enc, dec, fp.kernel_gen)
    pre = reassemble(dec, KernelMap(kernels))
    gate = None
    if fp.fusion_mode == "none":
        out = pre
    elif fp.fusion_mode == "skipping":
        out = enc + pre
    else:
        gate = sigmoid_map(nn_interpolate_x2(conv1x1(dec, fp.gate.conv)))
        out = gated_blend(enc, pre, gate)
    return out, (enc, dec, fp, kernels, kcache, pre, gate)


def fade_backward(cache, g_out: Tensor4) -> GradBundle:
    enc, dec, fp, kernels, kcache, pre, gate = cache
    ddec_gate = None
    if fp.fusion_mode == "none":
        g_pre, g_enc = g_out, None
    elif fp.fusion_mode == "skipping":
        g_pre, g_enc = g_out, g_out
    else:
        g_enc, g_pre, g_gate = gated_blend_vjp(enc, pre, gate, g_out)
        g_gl = nn_interpolate_x2_vjp(sigmoid_map_vjp(gate, g_gate))
        ddec_gate, gw, gb = conv2d_vjp(dec, fp.gate.conv, 1, Padding(), g_gl)
    if ddec_gate is None:
        gw, gb = np.zeros_like(fp.gate.conv.weight), np.zeros_like(fp.gate.conv.bias)
    ddec_re, dk = reassemble_vjp(dec, kernels, g_pre)
    kg = semishift_backward(kcache, dk)
    denc = kg.inputs["enc"] if g_enc is None else kg.inputs["enc"] + g_enc
    ddec = kg.inputs["dec"] + ddec_re
    if ddec_gate is not None:
        ddec = ddec + ddec_gate
    return GradBundle({"enc": denc, "dec": ddec}, {**kg.params, "gate.weight": gw, "gate.bias": gb})


def fade_value_and_vjp(enc: Tensor4, dec: Tensor4, fp: FadeParams, g_out: Tensor4):
    out, cache = fade_forward_cached(enc, dec, fp)
    return out, fade_backward(cache, g_out)


def predictor_forward(x: Tensor4, dec: Tensor4, params: KernelPredictorParams, shuffle: bool):
    """Single-source baseline: kernels predicted from ``x`` reassemble ``dec``."""
    h = params.content.kernel_size[0]
    z = conv1x1(x, params.compress)
    logits = conv2d(z, params.content, 1, Padding.uniform(h // 2))
    if shuffle:
        logits = pixel_shuffle(logits, 2)
    kernels = softmax_channels(logits)
    out = reassemble(dec, KernelMap(kernels))
    return out, (x, dec, params, shuffle, z, kernels)


def predictor_backward(cache, g_out: Tensor4):
    """Returns (dx, ddec, param grads); for the decoder-only baseline x is dec."""
    x, dec, params, shuffle, z, kernels = cache
    h = params.content.kernel_size[0]
    ddec, dk = reassemble_vjp(dec, kernels, g_out)
    g_logits = softmax_channels_vjp(kernels, dk)
    if shuffle:
        g_logits = pixel_unshuffle(g_logits, 2)
    dz, dcw, dcb = conv2d_vjp(z, params.content, 1, Padding.uniform(h // 2), g_logits)
    dx, dpw, dpb = conv2d_vjp(x, params.compress, 1, Padding(), dz)
    grads = {"compress.weight": dpw, "compress.bias": dpb, "content.weight": dcw, "content.bias": dcb}
    return dx, ddec, grads


def carafe_value_and_vjp(dec: Tensor4, params: KernelPredictorParams, g_out: Tensor4):
    out, cache = predictor_forward(dec, dec, params, True)
    dx, ddec, grads = predictor_backward(cache, g_out)
    return out, GradBundle({"dec": dx + ddec}, grads)


def encoder_only_value_and_vjp(enc: Tensor4, dec: Tensor4, params: KernelPredictorParams, g_out: Tensor4):
    enc, dec = check_pair(enc, dec)
    out, cache = predictor_forward(enc, dec, params, False)
    denc, ddec, grads = predictor_backward(cache, g_out)
    return out, GradBundle({"enc": denc, "dec": ddec}, grads)


# -- registry ---------------------------------------------------------------


@dataclass
class OpDef:
    forward: Callable[[dict, dict], np.ndarray]
    backward: Callable[[dict, dict, np.ndarray], GradBundle]
    sample: Callable[[SplitMix64, type], tuple[dict, dict]]


def _normal(rng, shape, dtype):
    return rng.normal(shape, dtype)


def _conv_op(stride: int, padding: Padding, x_shape=(2, 3, 6, 5)) -> OpDef:
    def fwd(i, p):
        return conv2d(i["x"], ConvWeights(p["weight"], p.get("bias")), stride, padding)

    def bwd(i, p, g):
        dx, dw, db = conv2d_vjp(i["x"], ConvWeights(p["weight"], p.get("bias")), stride, padding, g)
        grads = {"weight": dw}
        if db is not None:
            grads["bias"] = db
        return GradBundle({"x": dx}, grads)

    def sample(rng, dtype):
        return ({"x": _normal(rng, x_shape, dtype)},
                {"weight": _normal(rng, (4, 3, 3, 3), dtype), "bias": _normal(rng, (4,), dtype)})

    return OpDef(fwd, bwd, sample)


def _unary_op(fwd_fn, bwd_fn, shape) -> OpDef:
    return OpDef(
        lambda i, p: fwd_fn(i["x"]),
        lambda i, p, g: GradBundle({"x": bwd_fn(i["x"], g)}),
        lambda rng, dtype: ({"x": _normal(rng, shape, dtype)}, {}),
    )


def _reassemble_op() -> OpDef:
    def sample(rng, dtype):
        logits = _normal(rng, (2, 9, 8, 6), dtype)
        return {"dec": _normal(rng, (2, 3, 4, 3), dtype), "kernels": softmax_channels(logits)}, {}

    return OpDef(
        lambda i, p: reassemble(i["dec"], KernelMap(i["kernels"])),
        lambda i, p, g: GradBundle(dict(zip(("dec", "kernels"), reassemble_vjp(i["dec"], i["kernels"], g)))),
        sample,
    )


def _blend_op() -> OpDef:
    def sample(rng, dtype):
        return ({"enc": _normal(rng, (2, 3, 4, 6), dtype), "pre": _normal(rng, (2, 3, 4, 6), dtype),
                 "gate": sigmoid_map(_normal(rng, (2, 1, 4, 6), dtype))}, {})

    return OpDef(
        lambda i, p: gated_blend(i["enc"], i["pre"], i["gate"]),
        lambda i, p, g: GradBundle(dict(zip(("enc", "pre", "gate"), gated_blend_vjp(i["enc"], i["pre"], i["gate"], g)))),
        sample,
    )


def _pair_sample(rng, dtype, C=2, H=3, W=3, n=1):
    return {"enc": _normal(rng, (n, C, 2 * H, 2 * W), dtype), "dec": _normal(rng, (n, C, H, W), dtype)}


def _semishift_op() -> OpDef:
    from .kernel_gen import gen_kernels_semishift

    def sample(rng, dtype):
        inputs = _pair_sample(rng, dtype, C=3, H=3, W=3)
        return inputs, KernelGenParams.init(3, d=4, K=3, h=3, seed=rng, dtype=dtype).as_dict()

    return OpDef(
        lambda i, p: gen_kernels_semishift(i["enc"], i["dec"], KernelGenParams.from_dict(p), "unmerged").tensor,
        lambda i, p, g: semishift_value_and_vjp(i["enc"], i["dec"], KernelGenParams.from_dict(p), g)[1],
        sample,
    )


def _fade_op(mode: str) -> OpDef:
    from .upsample import fade_forward

    def sample(rng, dtype):
        inputs = _pair_sample(rng, dtype, C=2, H=3, W=3)
        return inputs, FadeParams.init(2, d=4, K=5, h=3, fusion_mode=mode, seed=rng, dtype=dtype).as_dict()

    return OpDef(
        lambda i, p: fade_forward(i["enc"], i["dec"], FadeParams.from_dict(p, mode)),
        lambda i, p, g: fade_value_and_vjp(i["enc"], i["dec"], FadeParams.from_dict(p, mode), g)[1],
        sample,
    )


def _carafe_op() -> OpDef:
    from .upsample import carafe_forward

    def sample(rng, dtype):
        return ({"dec": _normal(rng, (1, 2, 3, 3), dtype)},
                KernelPredictorParams.init(2, d=4, K=3, shuffle=True, seed=rng, dtype=dtype).as_dict())

    return OpDef(
        lambda i, p: carafe_forward(i["dec"], KernelPredictorParams.from_dict(p, 3)),
        lambda i, p, g: carafe_value_and_vjp(i["dec"], KernelPredictorParams.from_dict(p, 3), g)[1],
        sample,
    )


def _encoder_only_op() -> OpDef:
    from .upsample import encoder_only_forward

    def sample(rng, dtype):
        return (_pair_sample(rng, dtype, C=2, H=3, W=3),
                KernelPredictorParams.init(2, d=4, K=3, seed=rng, dtype=dtype).as_dict())

    return OpDef(
        lambda i, p: encoder_only_forward(i["enc"], i["dec"], KernelPredictorParams.from_dict(p, 3)),
        lambda i, p, g: encoder_only_value_and_vjp(i["enc"], i["dec"], KernelPredictorParams.from_dict(p, 3), g)[1],
        sample,
    )


OPS: dict[str, OpDef] = {
    "conv2d": _conv_op(1, Padding.uniform(1)),
    "conv2d_strided": _conv_op(2, Padding(1, 0, 1, 0), (2, 3, 6, 6)),
    "nn_interpolate_x2": _unary_op(nn_interpolate_x2, lambda x, g: nn_interpolate_x2_vjp(g), (2, 3, 3, 4)),
    "softmax_channels": _unary_op(softmax_channels, lambda x, g: softmax_channels_vjp(softmax_channels(x), g), (2, 5, 3, 3)),
    "sigmoid_map": _unary_op(sigmoid_map, lambda x, g: sigmoid_map_vjp(sigmoid_map(x), g), (2, 2, 3, 3)),
    "pixel_shuffle": _unary_op(pixel_shuffle, lambda x, g: pixel_unshuffle(g), (2, 8, 3, 2)),
    "reassemble": _reassemble_op(),
    "gated_blend": _blend_op(),
    "gen_kernels_semishift": _semishift_op(),
    "fade_forward": _fade_op("gating"),
    "fade_forward_none": _fade_op("none"),
    "fade_forward_skipping": _fade_op("skipping"),
    "carafe_forward": _carafe_op(),
    "encoder_only_forward": _encoder_only_op(),
}


def get_op(op_id: str) -> OpDef:
    try:
        return OPS[op_id]
    except KeyError:
        raise UnknownOp(f"no registered op {op_id!r}; known: {sorted(OPS)}") from None


def vjp(op_id: str, inputs: dict, params: dict, cotangent: np.ndarray) -> GradBundle:
    op = get_op(op_id)
    out = op.forward(inputs, params)
    if np.shape(cotangent) != out.shape:
        raise ShapeMismatch(f"cotangent shape {np.shape(cotangent)} != output shape {out.shape}")
    return op.backward(inputs, params, np.asarray(cotangent, dtype=out.dtype))


def sum_of_squares(op_id: str, inputs: dict, params: dict) -> float:
    out = get_op(op_id).forward(inputs, params)
    return float(np.sum(out.astype(np.float64) ** 2))


def _central(op_id: str, inputs: dict, params: dict, flat: np.ndarray, idx: int, step: float) -> float:
    theta = flat[idx]
    flat[idx] = theta + step
    f_plus = sum_of_squares(op_id, inputs, params)
    flat[idx] = theta - step
    f_minus = sum_of_squares(op_id, inputs, params)
    flat[idx] = theta
    return (f_plus - f_minus) / (2 * step)


def finite_diff_check(op_id: str, params: dict, inputs: dict, eps: float | None = None,
                      richardson: bool = True) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    The scalar loss is the sum of squared outputs. Each coordinate theta is
    perturbed by ``eps * max(1, |theta|)`` and the relative error uses
    ``max(|analytic|, |numeric|, 1e-8)`` as denominator.

    With ``richardson`` (the default) the central difference D is evaluated
    at steps s and s/2 and combined as (4 D(s/2) - D(s)) / 3, which cancels
    the s**2 truncation term. Default eps is 1e-3 in that mode and 1e-4 for
    the plain two-point stencil.
    """
    op = get_op(op_id)
    base = eps if eps is not None else (1e-3 if richardson else 1e-4)
    # Private contiguous copies: perturbations go through flat views and must not touch the caller's arrays.
    inputs = {k: np.array(v, order="C") for k, v in inputs.items()}
    params = {k: np.array(v, order="C") for k, v in params.items()}
    out = op.forward(inputs, params)
    grads = op.backward(inputs, params, 2 * out)
    worst = 0.0
    for group, store, gstore in (("input", inputs, grads.inputs), ("param", params, grads.params)):
        for name, arr in store.items():
            if name not in gstore:
                continue
            analytic = gstore[name]
            if analytic.shape != arr.shape:
                raise ShapeMismatch(f"gradient of {group} {name} has shape {analytic.shape}, expected {arr.shape}")
            if not np.all(np.isfinite(analytic)):
                raise NonFiniteGradient(f"analytic gradient of {group} {name} is not finite")
            flat = arr.reshape(-1)
            for idx in range(flat.size):
                step = base * max(1.0, abs(float(flat[idx])))
                numeric = _central(op_id, inputs, params, flat, idx, step)
                if richardson:
                    half = _central(op_id, inputs, params, flat, idx, step / 2)
                    numeric = (4 * half - numeric) / 3
                if not np.isfinite(numeric):
                    raise NonFiniteGradient(f"numeric gradient of {group} {name}[{idx}] is not finite")
                a = float(analytic.reshape(-1)[idx])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
    return worst


def certify(op_id: str, seed: int, eps: float | None = None, richardson: bool = True) -> float:
    """Run :func:`finite_diff_check` on a float64 random instance of ``op_id``."""
    inputs, params = get_op(op_id).sample(SplitMix64(seed), np.float64)
    return finite_diff_check(op_id, params, inputs, eps, richardson)


def sgd_step(params: dict, grads: dict, lr: float, momentum: float = 0.0, velocity: dict | None = None) -> dict:
    """theta <- theta - lr * g, or heavy-ball momentum when ``momentum`` > 0.

    ``velocity`` holds the momentum buffers and is updated in place.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    out = {}
    for k, theta in params.items():
        g = grads.get(k)
        if g is None:
            out[k] = theta
            continue
        if momentum:
            if velocity is None:
                raise ValueError("momentum needs a velocity dict")
            v = momentum * velocity.get(k, np.zeros_like(theta)) + g
            velocity[k] = v
            g = v
        out[k] = (theta - lr * g).astype(theta.dtype, copy=False)
    return out
