"""Analytic cost model and wall-clock micro-benchmarks.

Counting conventions:

* conv2d MACs = N * C_out * H_out * W_out * C_in * k_h * k_w, padded taps included
* reassembly MACs = N * C * (2H) * (2W) * K*K
* 1 MAC = 2 FLOPs
* element-wise FLOPs: softmax 5, sigmoid 4, bilinear 7 per output, bias add 1,
  branch sum 1, skip add 1, gated blend 3 per output plus 1 per gate element (1 - G)
* peak_bytes is the largest total of simultaneously live intermediates in a
  declared buffer schedule. The operator inputs (enc, dec) are not counted,
  the operator output is.
"""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import UnknownKind
from .kernel_gen import KernelGenParams, branch_macs, resolve_schedule
from .rng import SplitMix64

KINDS = ("bilinear", "carafe", "fade_naive", "fade_semishift", "fade_full")
CSV_HEADER = ["kind", "C", "H", "W", "K", "h", "d", "macs", "flops", "peak_bytes", "wall_ns_median"]

FLOPS_PER_SOFTMAX = 5
FLOPS_PER_SIGMOID = 4
FLOPS_PER_BILINEAR = 7


@dataclass(frozen=True)
class OpDesc:
    kind: str
    C: int
    H: int
    W: int
    K: int = 5
    h: int = 3
    d: int = 64
    N: int = 1
    schedule: str = "auto"
    itemsize: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown operator kind {self.kind!r}; expected one of {KINDS}")
        if min(self.C, self.H, self.W, self.K, self.h, self.d, self.N) < 1:
            raise ValueError(f"dimensions must be positive: {self}")


@dataclass
class FlopReport:
    macs: int
    flops: int
    peak_bytes: int
    wall_ns: float | None = None
    breakdown: dict[str, int] = field(default_factory=dict)
    buffers: dict[str, int] = field(default_factory=dict)


class _Schedule:
    """Buffers with a producing step and a last-use step."""

    def __init__(self):
        self.step = 0
        self.buffers: list[tuple[str, int, int, int]] = []  # name, bytes, born, last use
        self._open: dict[str, int] = {}

    def alloc(self, name: str, nbytes: int) -> None:
        self.step += 1
        self._open[name] = len(self.buffers)
        self.buffers.append((name, nbytes, self.step, self.step))

    def use(self, *names: str) -> None:
        for name in names:
            i = self._open[name]
            n, b, born, _ = self.buffers[i]
            self.buffers[i] = (n, b, born, self.step)

    def peak(self) -> int:
        return max(
            sum(b for _, b, born, last in self.buffers if born <= s <= last) for s in range(1, self.step + 1)
        )


def _kernel_gen_naive(o: OpDesc, macs: dict, ew: dict, s: _Schedule) -> None:
    N, C, H, W, kk, hh, d = o.N, o.C, o.H, o.W, o.K * o.K, o.h * o.h, o.d
    hw = 4 * H * W
    b = o.itemsize
    s.alloc("dec_interp", N * C * hw * b)
    s.alloc("concat", N * 2 * C * hw * b)
    s.use("dec_interp")
    s.alloc("compressed", N * d * hw * b)
    s.use("concat")
    macs["compress"] = N * hw * 2 * C * d
    ew["compress_bias"] = N * d * hw
    s.alloc("logits", N * kk * hw * b)
    s.use("compressed")
    macs["content"] = N * hw * d * kk * hh
    ew["content_bias"] = N * kk * hw
    s.alloc("kernels", N * kk * hw * b)
    s.use("logits")
    ew["softmax"] = FLOPS_PER_SOFTMAX * N * kk * hw


def _kernel_gen_semishift(o: OpDesc, macs: dict, ew: dict, s: _Schedule) -> None:
    N, C, H, W, kk, d = o.N, o.C, o.H, o.W, o.K * o.K, o.d
    b = o.itemsize
    plan = resolve_schedule(o.schedule, N, C, H, W, d, o.K, o.h)
    for branch in ("dec", "enc"):
        macs.update(branch_macs(branch, plan[branch], N, C, H, W, d, o.K, o.h))

    if plan["dec"] == "merged":
        s.alloc("dec_merged_weights", kk * (C + 1) * o.h * o.h * b)
        s.alloc("dec_with_ones", N * (C + 1) * H * W * b)
        s.alloc("dec_part", N * kk * H * W * b)
        s.use("dec_merged_weights", "dec_with_ones")
    else:
        s.alloc("dec_compressed", N * d * H * W * b)
        ew["dec_compress_bias"] = N * d * H * W
        s.alloc("dec_part", N * kk * H * W * b)
        s.use("dec_compressed")
    ew["content_bias"] = N * kk * H * W

    if plan["enc"] == "merged":
        s.alloc("enc_merged_weights", kk * C * o.h * o.h * b)
        src, src_bytes = "enc_merged_weights", 0
    else:
        s.alloc("enc_compressed", N * d * 4 * H * W * b)
        src, src_bytes = "enc_compressed", N * d * (2 * H + 1) * (2 * W + 1) * b
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        # corner-padded copy of the stride-2 conv input
        s.alloc(f"enc_padded_{dy}{dx}", src_bytes or N * C * (2 * H + 1) * (2 * W + 1) * b)
        s.use(src)
        s.alloc(f"corner_{dy}{dx}", N * kk * H * W * b)
        s.use(f"enc_padded_{dy}{dx}", "dec_part")
    ew["branch_sum"] = 4 * N * kk * H * W
    s.alloc("kernels", N * kk * 4 * H * W * b)
    s.use("corner_00", "corner_01", "corner_10", "corner_11")
    ew["softmax"] = FLOPS_PER_SOFTMAX * N * kk * 4 * H * W


def _kernel_gen_carafe(o: OpDesc, macs: dict, ew: dict, s: _Schedule) -> None:
    N, C, H, W, kk, hh, d = o.N, o.C, o.H, o.W, o.K * o.K, o.h * o.h, o.d
    b = o.itemsize
    s.alloc("compressed", N * d * H * W * b)
    macs["compress"] = N * H * W * C * d
    ew["compress_bias"] = N * d * H * W
    s.alloc("logits", N * 4 * kk * H * W * b)
    s.use("compressed")
    macs["content"] = N * H * W * d * 4 * kk * hh
    ew["content_bias"] = N * 4 * kk * H * W
    s.alloc("kernels", N * kk * 4 * H * W * b)
    s.use("logits")
    ew["softmax"] = FLOPS_PER_SOFTMAX * N * kk * 4 * H * W


def _reassembly(o: OpDesc, macs: dict, s: _Schedule) -> None:
    s.alloc("pre_upsampled", o.N * o.C * 4 * o.H * o.W * o.itemsize)
    s.use("kernels")
    macs["reassemble"] = o.N * o.C * 4 * o.H * o.W * o.K * o.K


def count_flops(desc: OpDesc) -> FlopReport:
    macs: dict[str, int] = {}
    ew: dict[str, int] = {}
    s = _Schedule()
    o = desc
    out_elems = o.N * o.C * 4 * o.H * o.W
    if o.kind == "bilinear":
        s.alloc("output", out_elems * o.itemsize)
        ew["bilinear"] = FLOPS_PER_BILINEAR * out_elems
    else:
        if o.kind == "carafe":
            _kernel_gen_carafe(o, macs, ew, s)
        elif o.kind == "fade_naive":
            _kernel_gen_naive(o, macs, ew, s)
        else:
            _kernel_gen_semishift(o, macs, ew, s)
        _reassembly(o, macs, s)
        if o.kind == "fade_full":
            n_low, n_high = o.N * o.H * o.W, o.N * 4 * o.H * o.W
            s.alloc("gate_logits", n_low * o.itemsize)
            macs["gate"] = n_low * o.C
            ew["gate_bias"] = n_low
            s.alloc("gate", n_high * o.itemsize)
            s.use("gate_logits")
            ew["sigmoid"] = FLOPS_PER_SIGMOID * n_high
            s.alloc("output", out_elems * o.itemsize)
            s.use("gate", "pre_upsampled")
            ew["blend"] = 3 * out_elems + n_high
    total_macs = sum(macs.values())
    flops = 2 * total_macs + sum(ew.values())
    buffers = {name: nbytes for name, nbytes, _, _ in s.buffers}
    return FlopReport(total_macs, flops, s.peak(), None, {**macs}, buffers)


# -- wall clock -------------------------------------------------------------


def _runner(desc: OpDesc, rng: SplitMix64):
    from .tensor_core import bilinear_x2
    from .upsample import FadeParams, KernelPredictorParams, carafe_forward, fade_forward

    N, C, H, W = desc.N, desc.C, desc.H, desc.W
    dec = rng.normal((N, C, H, W), np.float32)
    if desc.kind == "bilinear":
        return lambda: bilinear_x2(dec)
    if desc.kind == "carafe":
        cp = KernelPredictorParams.init(C, desc.d, desc.K, desc.h, shuffle=True, seed=rng)
        return lambda: carafe_forward(dec, cp)
    enc = rng.normal((N, C, 2 * H, 2 * W), np.float32)
    mode = "gating" if desc.kind == "fade_full" else "none"
    fp = FadeParams.init(C, desc.d, desc.K, desc.h, fusion_mode=mode, seed=rng)
    route = "naive" if desc.kind == "fade_naive" else "semishift"
    return lambda: fade_forward(enc, dec, fp, route=route, schedule=desc.schedule)


def time_op(desc: OpDesc, trials: int = 3, seed: int = 42) -> float:
    """Median wall time in nanoseconds over ``trials`` runs on seeded random tensors."""
    fn = _runner(desc, SplitMix64(seed))
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return float(statistics.median(samples))


def bench_run(grid: Iterable[OpDesc], trials: int = 3, seed: int = 42, timed: bool = True) -> list[dict]:
    """One row per descriptor: analytic counts plus (optionally) median wall time."""
    if trials < 3:
        raise ValueError("bench_run needs at least 3 trials")
    rows = []
    for desc in grid:
        rep = count_flops(desc)
        wall = time_op(desc, trials, seed) if timed else None
        rows.append({
            "kind": desc.kind, "C": desc.C, "H": desc.H, "W": desc.W, "K": desc.K, "h": desc.h, "d": desc.d,
            "macs": rep.macs, "flops": rep.flops, "peak_bytes": rep.peak_bytes,
            "wall_ns_median": "" if wall is None else f"{wall:.0f}",
        })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


FIG9_SIZES = (14, 28, 56, 112)
FIG9A_CHANNELS = (16, 32, 64, 128, 256)


def make_grid(name: str, kinds: Iterable[str] = KINDS, **overrides) -> list[OpDesc]:
    """Named grids: fig9a fixes decoder 56x56 (encoder 112x112) and sweeps channels;
    fig9b / fig9c fix 64 / 256 channels and sweep the decoder size."""
    if name == "fig9a":
        points = [(c, 56) for c in FIG9A_CHANNELS]
    elif name == "fig9b":
        points = [(64, s) for s in FIG9_SIZES]
    elif name == "fig9c":
        points = [(256, s) for s in FIG9_SIZES]
    else:
        raise ValueError(f"unknown grid {name!r}")
    return [replace(OpDesc(k, c, s, s), **overrides) for k in kinds for c, s in points]
