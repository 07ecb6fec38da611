"""Miniature diffusion transformer used to train the refiner end to end.

Latent "images" are 16 tokens of 4 channels (a 4x4 grid of patches). The
denoiser embeds the tokens, adds a learned position table and an MLP
timestep embedding, then runs blocks of latent self-attention,
cross-attention into the conditioning sequence and an FFN, and predicts the
injected noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, SpaceTagError
from .features import FeatureSequence, Space
from .nn import (AttentionParams, FeedForwardParams, LayerNormParams, multi_head_attention,
                 normal_param, zeros_param)
from .tensor import Tensor, as_tensor, gelu


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t) -> np.ndarray:
        """Cumulative product at 1-based step ``t``; ``t == 0`` maps to 1."""
        t = np.asarray(t)
        padded = np.concatenate([[1.0], self.alpha_bars])
        if np.any(t < 0) or np.any(t > self.timesteps):
            raise IndexError(f"timestep out of range [0, {self.timesteps}]: {t}")
        return padded[t]


def make_noise_schedule(timesteps: int, beta_start: float = 1e-4,
                        beta_end: float = 0.02) -> NoiseSchedule:
    if timesteps < 1:
        raise ConfigError(f"need at least one timestep, got {timesteps}")
    if not 0 < beta_start < 1 or not 0 < beta_end < 1:
        raise ConfigError("betas must lie in (0, 1)")
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


def q_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Forward diffusion ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t`` is a scalar step or one step per leading-axis sample.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 {x0.shape} and eps {eps.shape} differ")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.timesteps):
        raise IndexError(f"timestep must lie in [1, {sched.timesteps}], got {t}")
    ab = sched.alpha_bar(t)
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=-1)
    return emb


@dataclass(frozen=True)
class ToyDiTConfig:
    latent_tokens: int = 16
    latent_channels: int = 4
    hidden: int = 32
    heads: int = 4
    blocks: int = 2
    ffn_mult: int = 4
    cond_dim: int = 64

    def __post_init__(self):
        for name in ("latent_tokens", "latent_channels", "hidden", "heads", "blocks",
                     "ffn_mult", "cond_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"dit {name} must be positive")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")


@dataclass
class DiTBlock:
    ln1: LayerNormParams
    self_attn: AttentionParams
    ln2: LayerNormParams
    cross_attn: AttentionParams
    ln3: LayerNormParams
    ffn: FeedForwardParams


@dataclass
class ToyDiTParams:
    w_in: Tensor
    b_in: Tensor
    pos: Tensor
    t_w1: Tensor
    t_b1: Tensor
    t_w2: Tensor
    t_b2: Tensor
    w_cond: Tensor
    b_cond: Tensor
    blocks: list[DiTBlock]
    ln_out: LayerNormParams
    w_out: Tensor
    b_out: Tensor


def toy_dit_init(config: ToyDiTConfig, seed: int) -> ToyDiTParams:
    if config.blocks < 1:
        raise ConfigError("toy DiT needs at least one block")
    rng = np.random.default_rng(seed)
    h, c = config.hidden, config.latent_channels
    blocks = [
        DiTBlock(LayerNormParams.create(h), AttentionParams.create(h, config.heads, rng),
                 LayerNormParams.create(h), AttentionParams.create(h, config.heads, rng),
                 LayerNormParams.create(h), FeedForwardParams.create(h, h * config.ffn_mult, rng))
        for _ in range(config.blocks)
    ]
    return ToyDiTParams(
        w_in=normal_param(rng, (c, h), 1.0 / np.sqrt(c)), b_in=zeros_param(h),
        pos=normal_param(rng, (config.latent_tokens, h)),
        t_w1=normal_param(rng, (h, h), 1.0 / np.sqrt(h)), t_b1=zeros_param(h),
        t_w2=normal_param(rng, (h, h), 1.0 / np.sqrt(h)), t_b2=zeros_param(h),
        w_cond=normal_param(rng, (config.cond_dim, h), 1.0 / np.sqrt(config.cond_dim)),
        b_cond=zeros_param(h),
        blocks=blocks, ln_out=LayerNormParams.create(h),
        w_out=normal_param(rng, (h, c)), b_out=zeros_param(c),
    )


def toy_dit_forward(params: ToyDiTParams, x_t, t, cond, cond_mask=None) -> Tensor:
    """Predict noise for latents ``x_t`` [B, N, C] at steps ``t`` [B] given ``cond`` [B, Lc, Dc]."""
    x = as_tensor(x_t)
    cond = as_tensor(cond)
    if x.ndim != 3 or x.shape[1:] != (params.pos.shape[0], params.w_in.shape[0]):
        raise DimensionError(
            f"latents must be [B, {params.pos.shape[0]}, {params.w_in.shape[0]}], got {x.shape}")
    if cond.ndim != 3 or cond.shape[0] != x.shape[0]:
        raise DimensionError(f"condition must be [B, Lc, Dc] matching batch, got {cond.shape}")
    if cond.shape[-1] != params.w_cond.shape[0]:
        raise DimensionError(
            f"condition width {cond.shape[-1]} != expected {params.w_cond.shape[0]}")
    hidden = params.w_in.shape[1]
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    temb = gelu(timestep_embedding(t, hidden) @ params.t_w1 + params.t_b1) @ params.t_w2 \
        + params.t_b2
    h = x @ params.w_in + params.b_in + params.pos + temb.reshape(x.shape[0], 1, hidden)
    c = cond @ params.w_cond + params.b_cond
    for blk in params.blocks:
        n = blk.ln1(h)
        h = h + multi_head_attention(n, n, blk.self_attn)
        h = h + multi_head_attention(blk.ln2(h), c, blk.cross_attn, cond_mask)
        h = h + blk.ffn(blk.ln3(h))
    return params.ln_out(h) @ params.w_out + params.b_out


def denoise_loss(eps_hat: Tensor, eps) -> Tensor:
    eps = as_tensor(eps)
    if eps_hat.shape != eps.shape:
        raise DimensionError(f"eps_hat {eps_hat.shape} and eps {eps.shape} differ")
    diff = eps_hat - eps
    return (diff * diff).mean()


def toy_dit_forward_seq(params: ToyDiTParams, x_t, t, cond: FeatureSequence) -> Tensor:
    """Single-sample convenience wrapper taking a conditioning FeatureSequence."""
    if cond.space not in (Space.REFINED, Space.ALIGNED):
        raise SpaceTagError(f"condition must be refined or aligned, got {cond.space.value}")
    x = as_tensor(x_t)
    out = toy_dit_forward(params, x.reshape(1, *x.shape), np.asarray([t]),
                          cond.tokens.reshape(1, *cond.tokens.shape), cond.mask[None, :])
    return out.reshape(*x.shape)
