"""Alignment objective: weighted per-token cosine distance plus MSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateMaskError, DimensionError
from .features import FeatureSequence
from .tensor import Tensor, as_tensor, clamp_min, norm_lastdim

COS_EPS = 1e-12


@dataclass(frozen=True)
class AlignmentLossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or not self.lambda1 + self.lambda2 > 0:
            raise ConfigError(
                f"loss weights must be non-negative with positive sum, got "
                f"({self.lambda1}, {self.lambda2})")


@dataclass
class LossBreakdown:
    total: Tensor
    cosine_component: Tensor
    mse_component: Tensor

    def as_floats(self) -> tuple[float, float, float]:
        return self.total.item(), self.cosine_component.item(), self.mse_component.item()


def _check(pred: Tensor, target: Tensor, mask: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} and target {target.shape} differ")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape[:-1]:
        raise DimensionError(f"mask {mask.shape} does not match positions {pred.shape[:-1]}")
    if not mask.any():
        raise DegenerateMaskError("no position is valid in both pred and target")
    return mask


def row_cosine(pred: Tensor, target) -> Tensor:
    """Cosine similarity of matching rows over the last axis."""
    target = as_tensor(target)
    dot = (pred * target).sum(axis=-1)
    denom = clamp_min(norm_lastdim(pred) * norm_lastdim(target), COS_EPS)
    return dot / denom


def masked_cosine_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean of ``1 - cos`` over valid positions; works on ``[L, D]`` or ``[B, L, D]``."""
    target = as_tensor(target)
    mask = _check(pred, target, mask)
    w = mask.astype(np.float64)
    return ((1.0 - row_cosine(pred, target)) * w).sum() * (1.0 / w.sum())


def masked_mse_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean squared difference over valid positions and every channel."""
    target = as_tensor(target)
    mask = _check(pred, target, mask)
    w = mask.astype(np.float64)[..., None]
    diff = pred - target
    return (diff * diff * w).sum() * (1.0 / (w.sum() * pred.shape[-1]))


def masked_combined_loss(pred: Tensor, target, mask,
                         cfg: AlignmentLossConfig) -> LossBreakdown:
    cos = masked_cosine_loss(pred, target, mask)
    mse = masked_mse_loss(pred, target, mask)
    return LossBreakdown(cos * cfg.lambda1 + mse * cfg.lambda2, cos, mse)


def _shared(pred: FeatureSequence, target: FeatureSequence) -> np.ndarray:
    if pred.tokens.shape != target.tokens.shape:
        raise DimensionError(
            f"pred {pred.tokens.shape} and target {target.tokens.shape} differ in shape")
    return pred.mask & target.mask


def cosine_alignment_loss(pred: FeatureSequence, target: FeatureSequence) -> Tensor:
    return masked_cosine_loss(pred.tokens, target.tokens, _shared(pred, target))


def mse_alignment_loss(pred: FeatureSequence, target: FeatureSequence) -> Tensor:
    return masked_mse_loss(pred.tokens, target.tokens, _shared(pred, target))


def combined_alignment_loss(pred: FeatureSequence, target: FeatureSequence,
                            cfg: AlignmentLossConfig | None = None) -> LossBreakdown:
    return masked_combined_loss(pred.tokens, target.tokens, _shared(pred, target),
                                cfg or AlignmentLossConfig())


def mean_masked_cosine(pred: np.ndarray, target: np.ndarray, mask=None) -> float:
    """Plain-numpy mean row cosine, used for metrics and reports."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    cos = (pred * target).sum(-1) / np.maximum(
        np.linalg.norm(pred, axis=-1) * np.linalg.norm(target, axis=-1), COS_EPS)
    if mask is None:
        return float(cos.mean())
    mask = np.asarray(mask, dtype=bool)
    return float(cos[mask].mean())
