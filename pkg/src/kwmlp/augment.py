"""Training-time randomness: SpecAugment masks and stochastic block drop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpecAugmentConfig:
    time_masks: int = 2
    time_mask_width_max: int = 25
    freq_masks: int = 2
    freq_mask_width_max: int = 7


def apply_masks(mfcc: np.ndarray, time_masks=(), freq_masks=()) -> np.ndarray:
    """Zero the given ``(start, width)`` column and row ranges of a copy of ``mfcc``."""
    out = np.array(mfcc, copy=True)
    for start, width in time_masks:
        out[..., :, start:start + width] = 0
    for start, width in freq_masks:
        out[..., start:start + width, :] = 0
    return out


def draw_masks(shape: tuple[int, int], cfg: SpecAugmentConfig, rng: np.random.Generator):
    """Widths uniform on ``{0..max}``, offsets uniform on ``{0..size-width}``."""
    n_freq, n_time = shape

    def one(size, wmax):
        w = int(rng.integers(0, min(wmax, size) + 1))
        return int(rng.integers(0, size - w + 1)), w

    tm = [one(n_time, cfg.time_mask_width_max) for _ in range(cfg.time_masks)]
    fm = [one(n_freq, cfg.freq_mask_width_max) for _ in range(cfg.freq_masks)]
    return tm, fm


def spec_augment(mfcc: np.ndarray, cfg: SpecAugmentConfig, rng: np.random.Generator) -> np.ndarray:
    tm, fm = draw_masks(mfcc.shape[-2:], cfg, rng)
    return apply_masks(mfcc, tm, fm)


class SpecAugment:
    """Callable augmenter bound to one random stream; masks each clip independently."""

    def __init__(self, cfg: SpecAugmentConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        if batch.ndim == 2:
            return spec_augment(batch, self.cfg, self.rng)
        return np.stack([spec_augment(x, self.cfg, self.rng) for x in batch])


def sample_block_mask(depth: int, survival: float, rng: np.random.Generator | None) -> list[bool]:
    """Per-block keep flags for one training batch. ``rng=None`` means eval: keep all."""
    if not 0.0 < survival <= 1.0:
        raise ValueError(f"survival probability must be in (0, 1], got {survival}")
    if rng is None:
        return [True] * depth
    return [bool(u) for u in rng.random(depth) < survival]
