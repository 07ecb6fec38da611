"""Gated cross-modal refiner.

Each block applies, in order, self-attention over the text tokens,
cross-attention with text as queries and image latents as keys/values, and
an FFN. Every branch is pre-normed and enters the residual stream through its
own learnable scalar gate::

    h1 = x  + g_sa  * SelfAttn(LN1(x))
    h2 = h1 + g_ca  * CrossAttn(LN2(h1), latents)
    y  = h2 + g_ffn * FFN(LN3(h2))

With gates at 0 a block is exactly the identity on the text features.
Image latents carry no positional terms; cross-attention treats them as a set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateMaskError, DimensionError
from .features import FeatureSequence, Space
from .nn import (AttentionParams, FeedForwardParams, LayerNormParams, multi_head_attention,
                 normal_param, zeros_param)
from .tensor import Tensor


@dataclass(frozen=True)
class RefinerConfig:
    dim: int = 4096
    heads: int = 16
    ffn_mult: int = 4
    blocks: int = 1
    gate_init: float = 0.0
    # width of incoming image latents; None means they already have width ``dim``
    latent_dim: int | None = None

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"dim={self.dim} must be divisible by heads={self.heads}")
        if self.blocks < 1 or self.ffn_mult < 1:
            raise ConfigError("blocks and ffn_mult must be >= 1")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")


@dataclass
class RefinerBlock:
    ln1: LayerNormParams
    self_attn: AttentionParams
    ln2: LayerNormParams
    cross_attn: AttentionParams
    ln3: LayerNormParams
    ffn: FeedForwardParams
    g_sa: Tensor
    g_ca: Tensor
    g_ffn: Tensor

    def gates(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.g_sa, self.g_ca, self.g_ffn


@dataclass
class LatentProjection:
    w: Tensor
    b: Tensor


@dataclass
class RefinerParams:
    blocks: list[RefinerBlock]
    latent_proj: LatentProjection | None = None


def refiner_init(config: RefinerConfig, seed: int) -> RefinerParams:
    rng = np.random.default_rng(seed)
    d, hidden = config.dim, config.dim * config.ffn_mult

    def gate():
        return Tensor(np.array(float(config.gate_init)), requires_grad=True)

    blocks = [
        RefinerBlock(LayerNormParams.create(d), AttentionParams.create(d, config.heads, rng),
                     LayerNormParams.create(d), AttentionParams.create(d, config.heads, rng),
                     LayerNormParams.create(d), FeedForwardParams.create(d, hidden, rng),
                     gate(), gate(), gate())
        for _ in range(config.blocks)
    ]
    proj = None
    if config.latent_dim is not None and config.latent_dim != d:
        proj = LatentProjection(normal_param(rng, (config.latent_dim, d)), zeros_param(d))
    return RefinerParams(blocks, proj)


def refiner_forward_batch(params: RefinerParams, text: Tensor, text_mask,
                          latents, latent_mask=None) -> Tensor:
    """Batched refiner: ``text`` [B, Lt, d], ``latents`` [B, Li, d_latent]."""
    latents = latents if isinstance(latents, Tensor) else Tensor(latents)
    text_mask = np.asarray(text_mask, dtype=bool)
    if latent_mask is None:
        latent_mask = np.ones(latents.shape[:-1], dtype=bool)
    latent_mask = np.asarray(latent_mask, dtype=bool)
    if not latent_mask.any(axis=-1).all():
        raise DegenerateMaskError("image latents have no valid tokens")
    if not text_mask.any(axis=-1).all():
        raise DegenerateMaskError("text features have no valid tokens")
    dim = params.blocks[0].self_attn.dim
    if text.shape[-1] != dim:
        raise DimensionError(f"text width {text.shape[-1]} != refiner dim {dim}")
    if params.latent_proj is not None:
        if latents.shape[-1] != params.latent_proj.w.shape[0]:
            raise DimensionError(
                f"latent width {latents.shape[-1]} != {params.latent_proj.w.shape[0]}")
        latents = latents @ params.latent_proj.w + params.latent_proj.b
    elif latents.shape[-1] != dim:
        raise DimensionError(f"latent width {latents.shape[-1]} != refiner dim {dim}")

    x = text
    for blk in params.blocks:
        n = blk.ln1(x)
        x = x + blk.g_sa * multi_head_attention(n, n, blk.self_attn, text_mask)
        x = x + blk.g_ca * multi_head_attention(blk.ln2(x), latents, blk.cross_attn, latent_mask)
        x = x + blk.g_ffn * blk.ffn(blk.ln3(x))
    return x


def refiner_forward(params: RefinerParams, text: FeatureSequence,
                    image_latents: FeatureSequence) -> FeatureSequence:
    out = refiner_forward_batch(params, text.tokens.reshape(1, *text.tokens.shape),
                                text.mask[None, :],
                                image_latents.tokens.reshape(1, *image_latents.tokens.shape),
                                image_latents.mask[None, :])
    return FeatureSequence(out.reshape(*text.tokens.shape), text.mask.copy(), Space.REFINED)
