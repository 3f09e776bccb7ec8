"""Keyword-MLP: patch embedding, a stack of gated-MLP blocks, mean-pool head.

Block (post-norm, the default)::

    Z  = gelu(X U + b_u)                 # (N, proj)
    Z1, Z2 = split(Z)                    # (N, proj/2) each
    gate = S @ layer_norm(Z2) + b_s      # mixes along tokens
    Y  = layer_norm(Z1 * gate V + b_v + X)

``S`` starts near zero and ``b_s`` at one, so every block begins as
``layer_norm(gelu-path + X)`` with a unit gate. The pre-norm variant moves
the block norm to the input: ``Y = X + sgu(gelu(layer_norm(X) U + b_u)) V + b_v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_mfcc: int = 40
    n_frames: int = 98
    patch: tuple[int, int] = (40, 1)
    dim: int = 64
    dim_proj: int = 256
    depth: int = 12
    num_classes: int = 35
    norm: str = "post"

    def __post_init__(self):
        f, t = self.patch
        if self.n_mfcc % f or self.n_frames % t:
            raise ValueError(f"patch {self.patch} does not tile input {self.n_mfcc}x{self.n_frames}")
        if self.dim_proj % 2:
            raise ValueError("dim_proj must be even (the gate splits it in half)")
        if self.norm not in ("post", "pre"):
            raise ValueError(f"norm must be 'post' or 'pre', got {self.norm!r}")

    @property
    def num_patches(self) -> int:
        f, t = self.patch
        return (self.n_mfcc // f) * (self.n_frames // t)

    @property
    def patch_dim(self) -> int:
        return self.patch[0] * self.patch[1]


@dataclass
class Linear:
    w: Tensor
    b: Tensor

    def __call__(self, x):
        return T.bias_add(T.matmul(x, self.w), self.b)


@dataclass
class Norm:
    gamma: Tensor
    beta: Tensor

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


@dataclass
class PatchEmbedParams:
    proj: Linear


@dataclass
class SguParams:
    norm: Norm
    s: Tensor
    b_s: Tensor


@dataclass
class GmlpBlockParams:
    u: Linear
    sgu: SguParams
    v: Linear
    norm: Norm


@dataclass
class ModelParams:
    config: ModelConfig
    embed: PatchEmbedParams
    blocks: list[GmlpBlockParams]
    head: Linear = field(repr=False)

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"embed.w": self.embed.proj.w, "embed.b": self.embed.proj.b}
        for i, blk in enumerate(self.blocks):
            p = f"blocks.{i}."
            out.update({
                p + "u.w": blk.u.w, p + "u.b": blk.u.b,
                p + "sgu.norm.gamma": blk.sgu.norm.gamma, p + "sgu.norm.beta": blk.sgu.norm.beta,
                p + "sgu.s": blk.sgu.s, p + "sgu.b_s": blk.sgu.b_s,
                p + "v.w": blk.v.w, p + "v.b": blk.v.b,
                p + "norm.gamma": blk.norm.gamma, p + "norm.beta": blk.norm.beta,
            })
        out.update({"head.w": self.head.w, "head.b": self.head.b})
        return out

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def forward(self, mfcc, block_mask: Sequence[bool] | None = None) -> Tensor:
        return forward(self, mfcc, block_mask)


# ----------------------------------------------------------------------------
# init


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), dtype=dtype)


def init_linear(rng, n_in: int, n_out: int, dtype=np.float32) -> Linear:
    # Nonzero biases: a zero embedding bias turns masked (all-zero) MFCC columns
    # into constant tokens, where every LayerNorm multiplies gradients by 1/sqrt(eps).
    return Linear(_uniform(rng, (n_in, n_out), n_in, dtype), _uniform(rng, (n_out,), n_in, dtype))


def init_norm(n: int, dtype=np.float32) -> Norm:
    return Norm(Tensor(np.ones(n), dtype=dtype), Tensor(np.zeros(n), dtype=dtype))


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    n, half = cfg.num_patches, cfg.dim_proj // 2
    embed = PatchEmbedParams(init_linear(rng, cfg.patch_dim, cfg.dim, dtype))
    blocks = []
    for _ in range(cfg.depth):
        u = init_linear(rng, cfg.dim, cfg.dim_proj, dtype)
        eps = 1e-3 / n
        sgu = SguParams(init_norm(half, dtype),
                        Tensor(rng.uniform(-eps, eps, size=(n, n)), dtype=dtype),
                        Tensor(np.ones(n), dtype=dtype))
        v = init_linear(rng, half, cfg.dim, dtype)
        blocks.append(GmlpBlockParams(u, sgu, v, init_norm(cfg.dim, dtype)))
    head = init_linear(rng, cfg.dim, cfg.num_classes, dtype)
    return ModelParams(cfg, embed, blocks, head)


# ----------------------------------------------------------------------------
# forward


def patchify(mfcc: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """``(..., F, T)`` features to ``(..., N, f*t)`` flattened patches.

    With 40x1 patches token i is simply column i of the MFCC matrix.
    """
    mfcc = np.asarray(mfcc)
    if mfcc.shape[-2:] != (cfg.n_mfcc, cfg.n_frames):
        raise ShapeError(f"expected input (..., {cfg.n_mfcc}, {cfg.n_frames}), got {mfcc.shape}")
    f, t = cfg.patch
    lead = mfcc.shape[:-2]
    x = mfcc.reshape(*lead, cfg.n_mfcc // f, f, cfg.n_frames // t, t)
    k = len(lead)
    x = x.transpose(*range(k), k, k + 2, k + 1, k + 3)
    return np.ascontiguousarray(x.reshape(*lead, cfg.num_patches, f * t))


def patch_embed(mfcc, p: PatchEmbedParams, cfg: ModelConfig = ModelConfig()) -> Tensor:
    x = mfcc.data if isinstance(mfcc, Tensor) else mfcc
    patches = Tensor(patchify(x, cfg), dtype=p.proj.w.dtype)
    return p.proj(patches)


def sgu(z: Tensor, p: SguParams) -> Tensor:
    z1, z2 = T.split_last_axis(z)
    gate = T.bias_add(T.matmul(p.s, p.norm(z2)), p.b_s, axis=-2)
    return T.mul(z1, gate)


def gmlp_block(x: Tensor, p: GmlpBlockParams, active: bool = True, norm: str = "post") -> Tensor:
    if not active:
        return x
    if norm == "pre":
        z = T.gelu(p.u(p.norm(x)))
        return T.add(p.v(sgu(z, p.sgu)), x)
    z = T.gelu(p.u(x))
    return p.norm(T.add(p.v(sgu(z, p.sgu)), x))


def forward(params: ModelParams, mfcc, block_mask: Sequence[bool] | None = None) -> Tensor:
    """Logits for one ``(F, T)`` input or a ``(B, F, T)`` batch."""
    cfg = params.config
    if block_mask is None:
        block_mask = [True] * params.depth
    if len(block_mask) != params.depth:
        raise ValueError(f"block_mask has {len(block_mask)} flags for {params.depth} blocks")
    x = patch_embed(mfcc, params.embed, cfg)
    for blk, active in zip(params.blocks, block_mask):
        x = gmlp_block(x, blk, bool(active), cfg.norm)
    pooled = T.mean_over_axis(x, -2)
    return params.head(pooled)


# ----------------------------------------------------------------------------
# counting


def count_params(params) -> tuple[int, dict[str, int]]:
    """Total scalar count plus a breakdown keyed by component."""
    breakdown: dict[str, int] = {}
    for name, t in params.named_tensors().items():
        parts = name.split(".")
        if parts[0] == "blocks":
            key = f"blocks.{parts[1]}.{parts[2]}"
        else:
            key = parts[0]
        breakdown[key] = breakdown.get(key, 0) + int(t.size)
    return sum(breakdown.values()), breakdown


def param_count_formula(cfg: ModelConfig) -> int:
    n, d, p, h = cfg.num_patches, cfg.dim, cfg.dim_proj, cfg.dim_proj // 2
    embed = cfg.patch_dim * d + d
    block = (d * p + p) + (2 * h + n * n + n) + (h * d + d) + 2 * d
    head = d * cfg.num_classes + cfg.num_classes
    return embed + cfg.depth * block + head


def count_macs(cfg) -> int:
    """Multiply-accumulates for one input: embed, per-block U / S / V, head.

    Accepts a config or a params object. Norms, activations, gating and
    pooling are not counted.
    """
    cfg = getattr(cfg, "config", cfg)
    n, d, p, h = cfg.num_patches, cfg.dim, cfg.dim_proj, cfg.dim_proj // 2
    block = n * d * p + h * n * n + n * h * d
    return n * cfg.patch_dim * d + cfg.depth * block + d * cfg.num_classes
