"""Optimizer, schedule, loss, and the train / evaluate loops."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .augment import SpecAugment, SpecAugmentConfig, sample_block_mask
from .dataset import DatasetIndex, FeatureStore, batches
from .rng import make_rng
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "step", "lr", "train_loss", "val_loss", "val_acc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 140
    batch_size: int = 256
    base_lr: float = 1e-3
    warmup_epochs: int = 10
    weight_decay: float = 0.1
    label_smoothing: float = 0.1
    block_survival: float = 0.9
    time_masks: int = 2
    time_mask_width_max: int = 25
    freq_masks: int = 2
    freq_mask_width_max: int = 7
    seed: int = 0
    optimizer: str = "adamw"
    schedule: str = "cosine"
    lr_decay: float = 0.985
    augment: bool = True

    @property
    def spec_augment(self) -> SpecAugmentConfig:
        return SpecAugmentConfig(self.time_masks, self.time_mask_width_max,
                                 self.freq_masks, self.freq_mask_width_max)


# ----------------------------------------------------------------------------
# schedule


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for optimizer step ``step`` (0-based).

    ``cosine``: linear ramp from 0 reaching ``base_lr`` at the end of the
    warmup epochs, then a half cosine down to exactly 0 at the last step.
    ``exponential``: ``base_lr * lr_decay ** epoch``.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    if cfg.schedule == "exponential":
        return cfg.base_lr * cfg.lr_decay ** (step // steps_per_epoch)
    if cfg.schedule != "cosine":
        raise ValueError(f"unknown schedule {cfg.schedule!r}")
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if step < warm:
        return cfg.base_lr * step / warm
    if total <= warm:
        return cfg.base_lr
    progress = min(1.0, (step - warm) / (total - warm))
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def decays(name: str, arr: np.ndarray) -> bool:
    """Weight decay applies to matrices only; biases and norm affines are exempt."""
    return arr.ndim >= 2


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamWState,
               lr: float, weight_decay: float) -> None:
    """One in-place AdamW update with bias correction and decoupled decay."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if weight_decay and decays(name, p.data):
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ----------------------------------------------------------------------------
# loss


def smoothed_targets(targets: np.ndarray, num_classes: int, smoothing: float, dtype) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
        raise ValueError(f"targets must lie in [0, {num_classes}), got {targets.min()}..{targets.max()}")
    q = np.full((len(targets), num_classes), smoothing / num_classes, dtype=dtype)
    q[np.arange(len(targets)), targets] += 1.0 - smoothing
    return q


def label_smoothed_ce(logits: Tensor, targets, smoothing: float = 0.1) -> Tensor:
    """Mean over the batch of ``(1-e) * -log p_y + (e/K) * sum_k -log p_k``."""
    k = logits.shape[-1]
    q = smoothed_targets(np.atleast_1d(targets), k, smoothing, logits.dtype)
    if logits.ndim == 1:
        q, b = q[0], 1
    else:
        b = logits.shape[0]
    logp = T.log_softmax_last_axis(logits)
    return T.scale(T.tsum(T.mul(logp, Tensor(q))), -1.0 / b)


# ----------------------------------------------------------------------------
# loops


def evaluate(params, index: DatasetIndex, split: str, features: FeatureStore,
             label_smoothing: float = 0.1, batch_size: int = 256) -> tuple[float, float]:
    """Accuracy and mean loss on ``split``; no augmentation, every block active."""
    correct = 0
    total_loss = 0.0
    n = 0
    for x, y in batches(index, split, batch_size, features):
        logits = params.forward(x)
        loss = label_smoothed_ce(logits, y, label_smoothing)
        correct += int((logits.data.argmax(axis=-1) == y).sum())
        total_loss += float(loss.data) * len(y)
        n += len(y)
    return correct / n, total_loss / n


def predict(params, mfcc: np.ndarray) -> np.ndarray:
    """Class probabilities for one clip or a batch."""
    return T.softmax_last_axis(params.forward(mfcc)).data


@dataclass
class TrainResult:
    rows: list[dict]
    best_val_acc: float
    best_epoch: int
    steps: int
    stopped_early: bool = False


def train(params, index: DatasetIndex, cfg: TrainConfig, features: FeatureStore,
          metrics_path=None, on_best: Callable[[object, dict], None] | None = None,
          callback: Callable[[dict], bool] | None = None) -> TrainResult:
    """Train ``params`` in place.

    After each epoch a row ``epoch, step, lr, train_loss, val_loss, val_acc``
    is appended to ``metrics_path`` (if given). ``on_best(params, row)`` runs
    whenever validation accuracy improves; without a validation split it runs
    every epoch. ``callback(row)`` returning True stops training.
    """
    n_train = len(index.split("train"))
    if n_train == 0:
        raise ValueError("train split is empty")
    has_val = len(index.split("validation")) > 0
    spe = math.ceil(n_train / cfg.batch_size)
    named = params.named_tensors()
    for t in named.values():
        t.requires_grad = True
    state = AdamWState()
    wd = cfg.weight_decay if cfg.optimizer == "adamw" else 0.0
    if cfg.optimizer not in ("adamw", "adam"):
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")

    writer = None
    fh = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)

    rows: list[dict] = []
    best_acc, best_epoch = -1.0, -1
    step = 0
    stopped = False
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            shuffle_rng = make_rng(cfg.seed, "shuffle", epoch)
            drop_rng = make_rng(cfg.seed, "blockdrop", epoch)
            aug = SpecAugment(cfg.spec_augment, make_rng(cfg.seed, "specaugment", epoch)) if cfg.augment else None
            loss_sum, seen = 0.0, 0
            lr = 0.0
            for x, y in batches(index, "train", cfg.batch_size, features, shuffle_rng, aug):
                lr = lr_at(step, spe, cfg)
                mask = sample_block_mask(params.depth, cfg.block_survival, drop_rng)
                with Tape() as tape:
                    loss = label_smoothed_ce(params.forward(x, mask), y, cfg.label_smoothing)
                tape.backward(loss)
                grads = {k: t.grad for k, t in named.items() if t.grad is not None}
                adamw_step(named, grads, state, lr, wd)
                for t in named.values():
                    t.grad = None
                loss_sum += float(loss.data) * len(y)
                seen += len(y)
                step += 1
            row = {"epoch": epoch + 1, "step": step, "lr": lr, "train_loss": loss_sum / seen}
            if has_val:
                row["val_acc"], row["val_loss"] = evaluate(params, index, "validation", features,
                                                           cfg.label_smoothing, cfg.batch_size)
            else:
                row["val_acc"], row["val_loss"] = float("nan"), float("nan")
            rows.append(row)
            if writer is not None:
                writer.writerow([row[k] for k in METRICS_HEADER])
                fh.flush()
            log.info("epoch %d  lr %.2e  train %.4f  val %.4f / %.4f  (%.1fs)", row["epoch"], lr,
                     row["train_loss"], row["val_loss"], row["val_acc"], time.perf_counter() - t0)
            if not has_val or row["val_acc"] > best_acc:
                best_acc, best_epoch = row["val_acc"], row["epoch"]
                if on_best is not None:
                    on_best(params, row)
            if callback is not None and callback(row):
                stopped = True
                break
    finally:
        if fh is not None:
            fh.close()
        for t in named.values():
            t.requires_grad = False
    return TrainResult(rows, best_acc, best_epoch, step, stopped)
