"""Encoder-decoder transformer adapter from (scaled) LLM features to T5 space.

The encoder runs pre-norm self-attention/FFN layers over projected LLM tokens
with additive sinusoidal positions. The decoder starts from a learnable bank
of ``t_out`` query tokens, so the output length is fixed regardless of the
input length; each decoder layer does self-attention over the queries,
cross-attention into the encoder memory and an FFN.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DegenerateMaskError, DimensionError, SpaceTagError
from .features import FeatureSequence, Space
from .nn import (AttentionParams, FeedForwardParams, LayerNormParams, multi_head_attention,
                 normal_param, sinusoidal_positions, zeros_param)
from .tensor import Tensor


@dataclass(frozen=True)
class AdapterConfig:
    d_llm: int = 3584
    d_t5: int = 4096
    d_model: int = 256
    heads: int = 8
    encoder_layers: int = 3
    decoder_layers: int = 3
    t_out: int = 120
    ffn_mult: int = 4

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 1:
                raise ConfigError(f"adapter {name} must be positive, got {value}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")

    @classmethod
    def toy(cls, **overrides) -> AdapterConfig:
        base = dict(d_llm=48, d_t5=64, d_model=32, heads=4, t_out=8)
        base.update(overrides)
        return cls(**base)


@dataclass
class EncoderLayer:
    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    ffn: FeedForwardParams


@dataclass
class DecoderLayer:
    ln1: LayerNormParams
    self_attn: AttentionParams
    ln2: LayerNormParams
    cross_attn: AttentionParams
    ln3: LayerNormParams
    ffn: FeedForwardParams


@dataclass
class AdapterParams:
    w_in: Tensor
    b_in: Tensor
    encoder: list[EncoderLayer]
    queries: Tensor
    decoder: list[DecoderLayer]
    w_out: Tensor
    b_out: Tensor


def adapter_init(config: AdapterConfig, seed: int) -> AdapterParams:
    rng = np.random.default_rng(seed)
    d, hidden = config.d_model, config.d_model * config.ffn_mult
    w_in = normal_param(rng, (config.d_llm, d))
    encoder = [
        EncoderLayer(LayerNormParams.create(d), AttentionParams.create(d, config.heads, rng),
                     LayerNormParams.create(d), FeedForwardParams.create(d, hidden, rng))
        for _ in range(config.encoder_layers)
    ]
    queries = normal_param(rng, (config.t_out, d))
    decoder = [
        DecoderLayer(LayerNormParams.create(d), AttentionParams.create(d, config.heads, rng),
                     LayerNormParams.create(d), AttentionParams.create(d, config.heads, rng),
                     LayerNormParams.create(d), FeedForwardParams.create(d, hidden, rng))
        for _ in range(config.decoder_layers)
    ]
    w_out = normal_param(rng, (d, config.d_t5))
    return AdapterParams(w_in, zeros_param(d), encoder, queries, decoder, w_out,
                         zeros_param(config.d_t5))


def adapter_forward_batch(params: AdapterParams, values, mask) -> Tensor:
    """Batched forward: ``values`` [B, L, d_llm] with ``mask`` [B, L] -> [B, t_out, d_t5]."""
    x = values if isinstance(values, Tensor) else Tensor(values)
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 3:
        raise DimensionError(f"expected [B, L, d_llm] input, got {x.shape}")
    batch, length, width = x.shape
    if width != params.w_in.shape[0]:
        raise DimensionError(f"input width {width} != adapter d_llm {params.w_in.shape[0]}")
    if mask.shape != (batch, length):
        raise DimensionError(f"mask {mask.shape} does not match input {x.shape[:2]}")
    if not mask.any(axis=-1).all():
        raise DegenerateMaskError("adapter input has a sequence with no valid tokens")
    d = params.w_in.shape[1]

    h = x @ params.w_in + params.b_in + sinusoidal_positions(length, d)
    for layer in params.encoder:
        n = layer.ln1(h)
        h = h + multi_head_attention(n, n, layer.attn, mask)
        h = h + layer.ffn(layer.ln2(h))
    memory = h

    q = params.queries + np.zeros((batch, 1, 1))
    for layer in params.decoder:
        n = layer.ln1(q)
        q = q + multi_head_attention(n, n, layer.self_attn)
        q = q + multi_head_attention(layer.ln2(q), memory, layer.cross_attn, mask)
        q = q + layer.ffn(layer.ln3(q))
    return q @ params.w_out + params.b_out


def adapter_forward(params: AdapterParams, llm_seq: FeatureSequence) -> FeatureSequence:
    if llm_seq.space is not Space.LLM:
        raise SpaceTagError(f"adapter expects an llm sequence, got {llm_seq.space.value}")
    x = llm_seq.tokens.reshape(1, *llm_seq.tokens.shape)
    out = adapter_forward_batch(params, x, llm_seq.mask[None, :])
    t_out = out.shape[1]
    return FeatureSequence(out.reshape(t_out, out.shape[2]), np.ones(t_out, dtype=bool),
                           Space.ALIGNED)
