"""Toy detail-reconstruction task and the six-arm operator ablation.

Images are binary stripe and checkerboard patterns. The encoder feature is
the image itself and the decoder feature its 2x2 max pool, so fine
alternations are only recoverable from the encoder. Every trainable arm
upsamples the decoder (optionally helped by the encoder) back to full
resolution and is fit by full-batch gradient descent on the mean squared
error.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .autograd import (
    GradBundle,
    fade_backward,
    fade_forward_cached,
    predictor_backward,
    predictor_forward,
    sgd_step,
)
from .errors import BadSize, UnknownKind
from .rng import SplitMix64
from .tensor_core import bilinear_x2, maxpool_x2
from .upsample import FadeParams, KernelPredictorParams

TOY_KINDS = ("bilinear", "carafe", "encoder_only", "fade_no_gate", "fade_skip", "fade_full")
FADE_MODES = {"fade_no_gate": "none", "fade_skip": "skipping", "fade_full": "gating"}
ABLATION_HEADER = ["kind", "final_train_mse", "final_test_mse", "epochs", "lr", "seed"]

DEFAULT_EPOCHS = 200
DEFAULT_LR = 0.05
N_TRAIN = 32
N_TEST = 16
SIZE = 16
D_TOY = 8


@dataclass
class ToyInstance:
    image: np.ndarray  # (n, 1, 2H, 2W), values in {0, 1}

    @property
    def enc(self) -> np.ndarray:
        return self.image

    @property
    def dec(self) -> np.ndarray:
        return maxpool_x2(self.image)


@dataclass
class ToyDataset:
    train: ToyInstance
    test: ToyInstance


@dataclass
class TrainReport:
    kind: str
    epoch_mse: list[float]
    final_train_mse: float
    final_test_mse: float
    seed: int
    epochs: int
    lr: float
    params: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def stripe_image(size: int, period: int, phase: int = 0, vertical: bool = True) -> np.ndarray:
    """Binary stripes; ``period // 2`` lit pixels out of every ``period``."""
    coord = np.arange(size)
    line = (((coord + phase) % period) < period // 2).astype(np.float32)
    return np.tile(line, (size, 1)) if vertical else np.tile(line[:, None], (1, size))


def checkerboard_image(size: int, cell: int, phase_y: int = 0, phase_x: int = 0) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size]
    return ((((y + phase_y) // cell) + ((x + phase_x) // cell)) % 2).astype(np.float32)


def _random_images(rng: SplitMix64, n: int, size: int) -> np.ndarray:
    out = np.empty((n, 1, size, size), dtype=np.float32)
    kinds = rng.integers(0, 8, (n,))
    periods = rng.integers(2, 7, (n,))
    phases = rng.integers(0, 6, (n, 2))
    for i in range(n):
        p = int(periods[i])
        py, px = int(phases[i, 0]) % p, int(phases[i, 1]) % p
        if kinds[i] < 3:
            out[i, 0] = stripe_image(size, p, px, vertical=True)
        elif kinds[i] < 6:
            out[i, 0] = stripe_image(size, p, py, vertical=False)
        else:
            out[i, 0] = checkerboard_image(size, max(1, p // 2), py, px)
    return out


def make_toy_dataset(seed: int = 42, n_train: int = N_TRAIN, n_test: int = N_TEST, size: int = SIZE) -> ToyDataset:
    """Random-period (2-6 px), random-phase stripes and checkerboards.

    Train and test images come from separate child streams of ``seed``.
    """
    if size % 2 or size < 8:
        raise BadSize(f"image size must be even and at least 8, got {size}")
    root = SplitMix64(seed)
    return ToyDataset(
        ToyInstance(_random_images(root.spawn(1), n_train, size)),
        ToyInstance(_random_images(root.spawn(2), n_test, size)),
    )


def period2_stripes(n: int = 4, size: int = SIZE) -> ToyInstance:
    imgs = np.stack([stripe_image(size, 2, phase=i % 2)[None] for i in range(n)])
    return ToyInstance(imgs)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))


# -- arms -------------------------------------------------------------------


def init_params(kind: str, seed: int, C: int = 1, d: int = D_TOY, K: int = 5, h: int = 3) -> dict[str, np.ndarray]:
    rng = SplitMix64(seed).spawn(3)
    if kind == "bilinear":
        return {}
    if kind == "carafe":
        return KernelPredictorParams.init(C, d, K, h, shuffle=True, seed=rng).as_dict()
    if kind == "encoder_only":
        return KernelPredictorParams.init(C, d, K, h, shuffle=False, seed=rng).as_dict()
    if kind in FADE_MODES:
        return FadeParams.init(C, d, K, h, fusion_mode=FADE_MODES[kind], seed=rng).as_dict()
    raise UnknownKind(f"unknown toy kind {kind!r}; expected one of {TOY_KINDS}")


def forward_arm(kind: str, params: dict, data: ToyInstance, K: int = 5):
    """Output and a backward closure mapping the output cotangent to parameter grads."""
    enc, dec = data.enc, data.dec
    if kind == "bilinear":
        return bilinear_x2(dec), lambda g: {}
    if kind in ("carafe", "encoder_only"):
        shuffle = kind == "carafe"
        p = KernelPredictorParams.from_dict(params, K)
        out, cache = predictor_forward(dec if shuffle else enc, dec, p, shuffle)
        return out, lambda g: predictor_backward(cache, g)[2]
    if kind in FADE_MODES:
        out, cache = fade_forward_cached(enc, dec, FadeParams.from_dict(params, FADE_MODES[kind]))

        def back(g):
            grads: GradBundle = fade_backward(cache, g)
            return grads.params

        return out, back
    raise UnknownKind(f"unknown toy kind {kind!r}; expected one of {TOY_KINDS}")


def evaluate(kind: str, params: dict, data: ToyInstance) -> float:
    out, _ = forward_arm(kind, params, data)
    return mse(out, data.image)


def train_toy(kind: str, epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR, seed: int = 42,
              data: ToyDataset | None = None, d: int = D_TOY) -> TrainReport:
    """Full-batch gradient descent on mean squared reconstruction error.

    ``epoch_mse[e]`` is the training loss at the start of epoch ``e`` (the
    loss whose gradient drives that update). ``epochs = 0`` evaluates the
    untrained operator.
    """
    if kind not in TOY_KINDS:
        raise UnknownKind(f"unknown toy kind {kind!r}; expected one of {TOY_KINDS}")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    data = data if data is not None else make_toy_dataset(seed)
    params = init_params(kind, seed, d=d)
    target = data.train.image
    history = []
    for _ in range(epochs):
        out, back = forward_arm(kind, params, data.train)
        history.append(mse(out, target))
        if not params:
            continue
        g = (2.0 / out.size) * (out - target)
        params = sgd_step(params, back(g.astype(out.dtype)), lr)
    return TrainReport(
        kind=kind,
        epoch_mse=history,
        final_train_mse=evaluate(kind, params, data.train),
        final_test_mse=evaluate(kind, params, data.test),
        seed=seed,
        epochs=epochs,
        lr=lr,
        params=params,
    )


def ablation_suite(seed: int = 42, budget: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR,
                   kinds=TOY_KINDS) -> list[TrainReport]:
    if budget < 50:
        raise ValueError("ablation budget must be at least 50 epochs")
    data = make_toy_dataset(seed)
    return [train_toy(k, budget, lr, seed, data) for k in kinds]


def ablation_csv(reports: list[TrainReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_HEADER)
    for r in reports:
        w.writerow([r.kind, repr(r.final_train_mse), repr(r.final_test_mse), r.epochs, repr(r.lr), r.seed])
    return buf.getvalue()
