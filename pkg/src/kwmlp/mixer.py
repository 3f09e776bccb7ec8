"""MLP-Mixer on the same 40x1 MFCC patches, for the architecture ablation.

Each block applies a token-mixing MLP (along the 98 patches) and a
channel-mixing MLP, both pre-normed and residual::

    X1 = X + (gelu(norm(X)^T W1 + b1) W2 + b2)^T
    Y  = X1 + gelu(norm(X1) W3 + b3) W4 + b4
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import Linear, Norm, init_linear, init_norm, patchify
from .tensor import Tensor


@dataclass(frozen=True)
class MixerConfig:
    n_mfcc: int = 40
    n_frames: int = 98
    patch: tuple[int, int] = (40, 1)
    channels: int = 256
    token_hidden: int = 128
    channel_hidden: int = 1024
    depth: int = 8
    num_classes: int = 35

    @property
    def num_patches(self) -> int:
        f, t = self.patch
        return (self.n_mfcc // f) * (self.n_frames // t)

    @property
    def patch_dim(self) -> int:
        return self.patch[0] * self.patch[1]


@dataclass
class MlpParams:
    fc1: Linear
    fc2: Linear

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


@dataclass
class MixerBlockParams:
    token_norm: Norm
    token_mlp: MlpParams
    channel_norm: Norm
    channel_mlp: MlpParams


@dataclass
class MixerModelParams:
    config: MixerConfig
    embed: Linear
    blocks: list[MixerBlockParams]
    head: Linear

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"embed.w": self.embed.w, "embed.b": self.embed.b}
        for i, blk in enumerate(self.blocks):
            p = f"blocks.{i}."
            for kind in ("token", "channel"):
                norm = getattr(blk, f"{kind}_norm")
                mlp = getattr(blk, f"{kind}_mlp")
                out[p + f"{kind}_norm.gamma"] = norm.gamma
                out[p + f"{kind}_norm.beta"] = norm.beta
                for fc in ("fc1", "fc2"):
                    lin = getattr(mlp, fc)
                    out[p + f"{kind}_mlp.{fc}.w"] = lin.w
                    out[p + f"{kind}_mlp.{fc}.b"] = lin.b
        out.update({"head.w": self.head.w, "head.b": self.head.b})
        return out

    def forward(self, mfcc, block_mask: Sequence[bool] | None = None) -> Tensor:
        return mixer_forward(self, mfcc, block_mask)


def init_mixer(cfg: MixerConfig, rng: np.random.Generator, dtype=np.float32) -> MixerModelParams:
    n, c = cfg.num_patches, cfg.channels
    embed = init_linear(rng, cfg.patch_dim, c, dtype)
    blocks = [
        MixerBlockParams(
            init_norm(c, dtype),
            MlpParams(init_linear(rng, n, cfg.token_hidden, dtype), init_linear(rng, cfg.token_hidden, n, dtype)),
            init_norm(c, dtype),
            MlpParams(init_linear(rng, c, cfg.channel_hidden, dtype), init_linear(rng, cfg.channel_hidden, c, dtype)),
        )
        for _ in range(cfg.depth)
    ]
    return MixerModelParams(cfg, embed, blocks, init_linear(rng, c, cfg.num_classes, dtype))


def mixer_block(x: Tensor, p: MixerBlockParams) -> Tensor:
    mixed = T.transpose(p.token_mlp(T.transpose(p.token_norm(x))))
    x1 = T.add(x, mixed)
    return T.add(x1, p.channel_mlp(p.channel_norm(x1)))


def mixer_forward(params: MixerModelParams, mfcc, block_mask: Sequence[bool] | None = None) -> Tensor:
    x = mfcc.data if isinstance(mfcc, Tensor) else mfcc
    if block_mask is None:
        block_mask = [True] * params.depth
    if len(block_mask) != params.depth:
        raise ValueError(f"block_mask has {len(block_mask)} flags for {params.depth} blocks")
    h = params.embed(Tensor(patchify(x, params.config), dtype=params.embed.w.dtype))
    for blk, active in zip(params.blocks, block_mask):
        if active:
            h = mixer_block(h, blk)
    return params.head(T.mean_over_axis(h, -2))


def mixer_param_formula(cfg: MixerConfig) -> int:
    n, c, ds, dc = cfg.num_patches, cfg.channels, cfg.token_hidden, cfg.channel_hidden
    block = 4 * c + (n * ds + ds + ds * n + n) + (c * dc + dc + dc * c + c)
    return cfg.patch_dim * c + c + cfg.depth * block + c * cfg.num_classes + cfg.num_classes


def count_mixer_macs(cfg) -> int:
    cfg = getattr(cfg, "config", cfg)
    n, c, ds, dc = cfg.num_patches, cfg.channels, cfg.token_hidden, cfg.channel_hidden
    block = 2 * c * n * ds + 2 * n * c * dc
    return n * cfg.patch_dim * c + cfg.depth * block + c * cfg.num_classes
