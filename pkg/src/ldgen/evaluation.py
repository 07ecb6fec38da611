"""Alignment reports for trained adapters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .checkpoint import Checkpoint
from .config import RunConfig
from .errors import DataError
from .features import Space
from .teacher import SyntheticTeacher
from .training import adapter_outputs, load_adapter, prepare_alignment_arrays


@dataclass
class LanguageStats:
    count: int
    mean_cosine: float
    mse: float


@dataclass
class AlignmentReport:
    count: int
    mean_cosine: float
    p5_cosine: float
    p50_cosine: float
    p95_cosine: float
    mse: float
    per_language: dict[str, LanguageStats] = field(default_factory=dict)
    cross_language_cosine: float | None = None
    sample_cosines: list[float] = field(default_factory=list, repr=False)

    def to_json(self, include_samples: bool = False) -> dict:
        d = asdict(self)
        if not include_samples:
            d.pop("sample_cosines")
        return d


def _row_cosines(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.linalg.norm(pred, axis=-1) * np.linalg.norm(target, axis=-1), 1e-12)
    return (pred * target).sum(-1) / denom


def aligned_predictions(ckpt: Checkpoint, pairs, config: RunConfig | None = None):
    """Adapter outputs for ``pairs`` plus target values and masks fitted to the output length."""
    config = config or RunConfig.from_dict(ckpt.config)
    params = load_adapter(config, ckpt)
    x, xm, y, ym = prepare_alignment_arrays(pairs, ckpt.coefficient, config.adapter.t_out)
    return adapter_outputs(params, x, xm), y, ym


def cross_language_cosine(ckpt: Checkpoint, teacher: SyntheticTeacher, n: int = 128,
                          start: int = 0, config: RunConfig | None = None) -> float:
    """Mean token cosine between aligned outputs of the same ``z`` rendered in different languages."""
    if len(teacher.languages) < 2:
        raise DataError("cross-language consistency needs a teacher with two or more languages")
    config = config or RunConfig.from_dict(ckpt.config)
    params = load_adapter(config, ckpt)
    outs = {}
    for lang in teacher.languages:
        pairs = [teacher.pair(i, lang) for i in range(start, start + n)]
        x, xm, _, _ = prepare_alignment_arrays(pairs, ckpt.coefficient, config.adapter.t_out)
        outs[lang] = adapter_outputs(params, x, xm)
    sims = [_row_cosines(outs[a], outs[b]).mean() for a, b in combinations(teacher.languages, 2)]
    return float(np.mean(sims))


def evaluate_alignment(ckpt: Checkpoint, pairs, languages=None,
                       teacher: SyntheticTeacher | None = None,
                       config: RunConfig | None = None) -> AlignmentReport:
    """Masked token cosine and MSE of the checkpoint's adapter on (source, target) pairs."""
    if not pairs:
        raise DataError("cannot evaluate on an empty dataset")
    for i, (src, tgt) in enumerate(pairs):
        if src.space is not Space.LLM or tgt.space is not Space.T5:
            raise DataError(f"pair {i} has spaces ({src.space.value}, {tgt.space.value}), "
                            f"expected (llm, t5)")
    languages = list(languages) if languages is not None else ["unk"] * len(pairs)
    if len(languages) != len(pairs):
        raise DataError(f"{len(languages)} language tags for {len(pairs)} pairs")
    config = config or RunConfig.from_dict(ckpt.config)
    pred, y, ym = aligned_predictions(ckpt, pairs, config)
    if pred.shape[-1] != y.shape[-1]:
        raise DataError(f"adapter outputs width {pred.shape[-1]}, targets have {y.shape[-1]}")

    cos = _row_cosines(pred, y)
    sq = ((pred - y) ** 2).mean(-1)
    w = ym.astype(np.float64)
    # per-sample masked means, then pooled over all valid tokens
    sample_cos = (cos * w).sum(1) / w.sum(1)
    token_cos = cos[ym]
    langs = np.asarray(languages)
    per_language = {}
    for lang in sorted(set(languages)):
        sel = langs == lang
        per_language[lang] = LanguageStats(int(sel.sum()), float(cos[sel][ym[sel]].mean()),
                                           float(sq[sel][ym[sel]].mean()))
    cross = None
    if teacher is not None and len(teacher.languages) > 1:
        cross = cross_language_cosine(ckpt, teacher, n=min(len(pairs), 128), config=config)
    p5, p50, p95 = np.percentile(sample_cos, [5, 50, 95])
    return AlignmentReport(len(pairs), float(token_cos.mean()), float(p5), float(p50), float(p95),
                           float(sq[ym].mean()), per_language, cross,
                           [float(c) for c in sample_cos])
