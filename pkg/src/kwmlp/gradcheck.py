"""Double-precision gradient checks of whole models at toy scale."""

from __future__ import annotations

import dataclasses

import numpy as np

from .mixer import MixerConfig, init_mixer
from .model import ModelConfig, init_params
from .tensor import grad_check
from .training import label_smoothed_ce

TOY_KWMLP = ModelConfig(n_mfcc=5, n_frames=6, patch=(5, 1), dim=8, dim_proj=16, depth=2, num_classes=3)
TOY_MIXER = MixerConfig(n_mfcc=5, n_frames=6, patch=(5, 1), channels=8, token_hidden=4,
                        channel_hidden=16, depth=2, num_classes=3)
TOLERANCE = 1e-4
STEP = 1e-4


def _toy_batch(cfg, rng, batch=4):
    x = rng.normal(size=(batch, cfg.n_mfcc, cfg.n_frames))
    y = rng.integers(0, cfg.num_classes, size=batch)
    return x, y


def kwmlp_error(seed: int, norm: str = "post", step: float = STEP) -> float:
    """Max relative gradient error of the toy KW-MLP loss over all parameters.

    The spatial weights are redrawn away from their near-zero init so the
    token-mixing path carries real gradient.
    """
    rng = np.random.default_rng(seed)
    cfg = dataclasses.replace(TOY_KWMLP, norm=norm)
    params = init_params(cfg, rng, dtype=np.float64)
    for blk in params.blocks:
        blk.sgu.s.data[:] = rng.normal(0.0, 0.5, size=blk.sgu.s.shape)
        blk.sgu.b_s.data[:] = rng.normal(1.0, 0.3, size=blk.sgu.b_s.shape)
    x, y = _toy_batch(cfg, rng)
    tensors = list(params.named_tensors().values())
    return grad_check(lambda *_: label_smoothed_ce(params.forward(x), y, 0.1), tensors, step)


def mixer_error(seed: int, step: float = STEP) -> float:
    rng = np.random.default_rng(seed)
    params = init_mixer(TOY_MIXER, rng, dtype=np.float64)
    x, y = _toy_batch(TOY_MIXER, rng)
    tensors = list(params.named_tensors().values())
    return grad_check(lambda *_: label_smoothed_ce(params.forward(x), y, 0.1), tensors, step)


def run_suite(arch: str = "all", seeds=range(20)) -> dict[str, list[float]]:
    """Errors per suite name for each seed."""
    suites = {}
    if arch in ("kwmlp", "all"):
        suites["kwmlp-post"] = [kwmlp_error(s, "post") for s in seeds]
        suites["kwmlp-pre"] = [kwmlp_error(s, "pre") for s in seeds]
    if arch in ("mixer", "all"):
        suites["mixer"] = [mixer_error(s) for s in seeds]
    if not suites:
        raise ValueError(f"unknown arch {arch!r}")
    return suites
