"""Mini-batch training with Adam, evaluation and the inference latency benchmark."""
from __future__ import annotations

import logging
import os
import platform
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from limbnet import nn
from limbnet.errors import ValidationError
from limbnet.metrics import ConfusionMatrix
from limbnet.model import ModelConfig, ModelWeights, Predictor, build_model, forward, \
    forward_logits, backward
from limbnet.pipeline import WindowFrame, stack_frames
from limbnet.wavelet import DenoiseConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "seed": self.seed,
                "denoise": self.denoise.to_dict()}


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float | None
    val_accuracy: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def predict_proba(weights: ModelWeights, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class probabilities for a stack of windows ``(n, C, L)``."""
    out = [forward(weights, x[i:i + batch_size])[0].probabilities
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, weights.config.n_classes))


def _loss_and_accuracy(weights: ModelWeights, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    probs = predict_proba(weights, x)
    picked = np.clip(probs[np.arange(len(y)), y], 1e-300, None)
    return float(-np.log(picked).mean()), float((probs.argmax(axis=1) == y).mean())


def train(weights: ModelWeights, frames_train: list[WindowFrame],
          frames_val: list[WindowFrame] | None, config: TrainConfig,
          on_epoch: Callable[[EpochStats], None] | None = None
          ) -> tuple[ModelWeights, list[EpochStats]]:
    """Train a copy of ``weights``; the input weights are left untouched.

    Each epoch reshuffles the training frames, runs mini-batch Adam on the mean
    cross-entropy, then scores the whole train and validation partitions in
    eval mode. All randomness (shuffles, dropout) comes from ``config.seed``.
    """
    if not frames_train:
        raise ValidationError("training set is empty")
    x, y = stack_frames(frames_train)
    if np.any(y < 0) or np.any(y >= weights.config.n_classes):
        raise ValidationError("training labels out of range")
    xv, yv = stack_frames(frames_val) if frames_val else (None, None)

    weights = weights.copy()
    params = weights.arrays()
    state = nn.AdamState.zeros_like(params)
    rng = nn.make_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            logits, cache = forward_logits(weights, x[idx], training=True, rng=rng)
            _, dlogits = nn.softmax_cross_entropy(logits, y[idx])
            grads = backward(weights, cache, dlogits / len(idx)).arrays()
            nn.adam_step(params, grads, state, config.lr, config.beta1, config.beta2, config.eps)
        train_loss, train_acc = _loss_and_accuracy(weights, x, y)
        val_loss = val_acc = None
        if xv is not None:
            val_loss, val_acc = _loss_and_accuracy(weights, xv, yv)
        stats = EpochStats(epoch + 1, train_loss, train_acc, val_loss, val_acc)
        history.append(stats)
        log.debug("epoch %d: %s", epoch + 1, stats)
        if on_epoch:
            on_epoch(stats)
    return weights, history


def evaluate(weights: ModelWeights, frames: list[WindowFrame]) -> tuple[ConfusionMatrix, np.ndarray]:
    """Eval-mode confusion matrix and per-frame probabilities (frame order kept)."""
    if not frames:
        raise ValidationError("nothing to evaluate")
    x, y = stack_frames(frames)
    probs = predict_proba(weights, x)
    # np.argmax takes the lowest index on ties
    return (ConfusionMatrix.from_predictions(y, probs.argmax(axis=1), weights.config.n_classes),
            probs)


# ---------------------------------------------------------------- latency

def host_info() -> dict:
    return {"machine": platform.machine(), "processor": platform.processor() or "unknown",
            "system": f"{platform.system()} {platform.release()}",
            "python": platform.python_version(), "numpy": np.__version__,
            "cpu_count": os.cpu_count()}


def latency_benchmark(weights: ModelWeights | None = None, n_iters: int = 1000,
                      warmup_iters: int = 50, rng: np.random.Generator | None = None,
                      dtype=np.float64) -> dict:
    """Wall-clock time of single-window eval-mode inference, in milliseconds.

    Each timed call classifies one fresh random window. Returns mean, p50, p99
    (plus min/max) and a description of the host.
    """
    if n_iters < 1:
        raise ValidationError("n_iters must be >= 1")
    if weights is None:
        weights = build_model(ModelConfig())
    rng = rng if rng is not None else nn.make_rng(0)
    cfg = weights.config
    predictor = Predictor(weights, dtype)
    windows = rng.standard_normal((warmup_iters + n_iters, cfg.n_channels, cfg.window_len))
    windows = windows.astype(dtype)
    for w in windows[:warmup_iters]:
        predictor(w)
    samples = np.empty(n_iters)
    clock = time.perf_counter
    for i, w in enumerate(windows[warmup_iters:]):
        t0 = clock()
        predictor(w)
        samples[i] = clock() - t0
    samples *= 1e3
    return {"n_iters": n_iters, "warmup_iters": warmup_iters, "dtype": np.dtype(dtype).name,
            "mean_ms": float(samples.mean()), "p50_ms": float(np.percentile(samples, 50)),
            "p99_ms": float(np.percentile(samples, 99)), "min_ms": float(samples.min()),
            "max_ms": float(samples.max()), "host": host_info()}
