"""Parameter containers and layers built from :mod:`ldgen.tensor` primitives."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DegenerateMaskError, DimensionError
from .tensor import Tensor, gelu, layer_norm, matmul, softmax_lastdim, transpose

INIT_STD = 0.02


def normal_param(rng: np.random.Generator, shape, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def create(cls, dim: int) -> LayerNormParams:
        return cls(ones_param(dim), zeros_param(dim))

    def __call__(self, x: Tensor, eps: float = 1e-5) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps)


@dataclass
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int = dataclasses.field(default=1, metadata={"static": True})

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} must be [{d}x{d}], got {getattr(self, name).shape}")
        if self.heads < 1 or d % self.heads:
            raise DimensionError(f"heads={self.heads} does not divide dim={d}")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def create(cls, dim: int, heads: int, rng: np.random.Generator,
               std: float = INIT_STD) -> AttentionParams:
        return cls(*(normal_param(rng, (dim, dim), std) for _ in range(4)), heads=heads)


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def create(cls, dim: int, hidden: int, rng: np.random.Generator,
               std: float = INIT_STD) -> FeedForwardParams:
        return cls(normal_param(rng, (dim, hidden), std), zeros_param(hidden),
                   normal_param(rng, (hidden, dim), std), zeros_param(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return gelu(x @ self.w1 + self.b1) @ self.w2 + self.b2


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, dim = x.shape
    x = x.reshape(*lead, length, heads, dim // heads)
    n = len(lead)
    return transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, dh = x.shape
    n = len(lead)
    x = transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return x.reshape(*lead, length, heads * dh)


def multi_head_attention(q_in: Tensor, kv_in: Tensor, params: AttentionParams,
                         kv_mask=None) -> Tensor:
    """Scaled dot-product attention with ``params.heads`` heads.

    Accepts ``[L, d]`` inputs or batched ``[B, L, d]`` inputs. ``kv_mask`` marks
    valid keys (True) with shape ``[Lk]`` or ``[B, Lk]``; masked keys get
    exactly zero weight.
    """
    d = params.dim
    if q_in.shape[-1] != d or kv_in.shape[-1] != d:
        raise DimensionError(
            f"attention width {d} does not match inputs {q_in.shape} / {kv_in.shape}")
    if q_in.shape[:-2] != kv_in.shape[:-2]:
        raise DimensionError(f"batch mismatch: {q_in.shape} vs {kv_in.shape}")
    h = params.heads
    q = _split_heads(q_in @ params.w_q, h)
    k = _split_heads(kv_in @ params.w_k, h)
    v = _split_heads(kv_in @ params.w_v, h)
    scores = matmul(q, k.T) * (1.0 / np.sqrt(d // h))
    mask = None
    if kv_mask is not None:
        mask = np.asarray(kv_mask, dtype=bool)
        if mask.shape[-1] != kv_in.shape[-2]:
            raise DimensionError(f"kv_mask length {mask.shape[-1]} != keys {kv_in.shape[-2]}")
        if not mask.any(axis=-1).all():
            raise DegenerateMaskError("attention has every key masked")
        # [.., Lk] -> [.., 1 (heads), 1 (queries), Lk]
        mask = mask[..., None, None, :]
    weights = softmax_lastdim(scores, mask)
    return _merge_heads(matmul(weights, v)) @ params.w_o


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` for every Tensor inside nested dataclasses/lists."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            if f.metadata.get("static"):
                continue
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(getattr(obj, f.name), name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


def parameter_count(obj) -> int:
    return sum(t.size for t in parameters(obj))


def set_requires_grad(obj, flag: bool) -> None:
    for t in parameters(obj):
        t.requires_grad = flag


def load_named(obj, blobs: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy arrays from ``blobs`` into the matching tensors of ``obj`` in place."""
    for name, t in named_parameters(obj, prefix):
        if name not in blobs:
            raise KeyError(f"missing parameter {name!r}")
        arr = np.asarray(blobs[name], dtype=np.float64)
        if arr.shape != t.shape:
            raise DimensionError(f"parameter {name!r}: expected {t.shape}, got {arr.shape}")
        t.data = arr.copy()


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
