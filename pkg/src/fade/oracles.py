"""Slow loop references used by the verification suite and the tests."""
from __future__ import annotations

import numpy as np


class MacCounter:
    def __init__(self):
        self.count = 0


def conv2d_loops(x, weight, bias=None, stride=1, padding=(0, 0, 0, 0), counter: MacCounter | None = None):
    """Six nested loops, float64 accumulation; counts every multiply including padded taps."""
    t, b, l, r = padding
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    ho = (h + t + b - kh) // stride + 1
    wo = (w + l + r - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for bi in range(n):
        for o in range(co):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for ch in range(ci):
                        for i in range(kh):
                            for j in range(kw):
                                sy, sx = y * stride + i - t, xx * stride + j - l
                                if 0 <= sy < h and 0 <= sx < w:
                                    acc += float(x[bi, ch, sy, sx]) * float(weight[o, ch, i, j])
                                if counter is not None:
                                    counter.count += 1
                    if bias is not None:
                        acc += float(bias[o])
                    out[bi, o, y, xx] = acc
    return out


def maxpool_loops(x):
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    for bi in range(n):
        for ch in range(c):
            for y in range(h // 2):
                for xx in range(w // 2):
                    out[bi, ch, y, xx] = max(x[bi, ch, 2 * y + a, 2 * xx + d] for a in (0, 1) for d in (0, 1))
    return out


def reassemble_loops(dec, kernels):
    n, c, h, w = dec.shape
    kk = kernels.shape[1]
    K = int(round(kk ** 0.5))
    r = K // 2
    out = np.zeros((n, c, 2 * h, 2 * w))
    for bi in range(n):
        for y in range(2 * h):
            for x in range(2 * w):
                for u in range(K):
                    for v in range(K):
                        sy, sx = y // 2 + u - r, x // 2 + v - r
                        if 0 <= sy < h and 0 <= sx < w:
                            out[bi, :, y, x] += float(kernels[bi, u * K + v, y, x]) * dec[bi, :, sy, sx].astype(np.float64)
    return out


def bilinear_loops(x):
    """Half-pixel x2 bilinear with clamped borders, one output at a time."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w))

    def taps(dst, size):
        s = max((dst + 0.5) / 2 - 0.5, 0.0)
        lo = int(np.floor(s))
        return lo, min(lo + 1, size - 1), s - lo

    for y in range(2 * h):
        y0, y1, fy = taps(y, h)
        for xx in range(2 * w):
            x0, x1, fx = taps(xx, w)
            out[:, :, y, xx] = ((1 - fy) * (1 - fx) * x[:, :, y0, x0] + (1 - fy) * fx * x[:, :, y0, x1]
                                + fy * (1 - fx) * x[:, :, y1, x0] + fy * fx * x[:, :, y1, x1])
    return out
