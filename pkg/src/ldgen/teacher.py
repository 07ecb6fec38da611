"""Synthetic stand-ins for LLM features, T5 targets and image latents.

A teacher owns fixed random maps. Each sample draws a semantic vector ``z``
from a seed derived from ``(teacher.seed, stream, index)``, so output does not
depend on generation order and the same index yields the same ``z`` in every
language:

* source (per language): ``L`` tokens ``source_scale * (z @ A_lang + sigma * noise)``
  with ``L`` drawn from ``[min_len, max_len]``;
* target: row ``i`` is ``target_scale * (z @ M_i + c_i) @ B`` where
  ``M_i = I + mix_strength * R_i`` is a fixed per-position mixing;
* latent: ``tanh(latent_gain * z @ D)`` reshaped to ``[tokens, channels]``
  plus ``latent_noise`` Gaussian noise.

Targets depend only on ``z``; several languages mapping onto one target
mimics aligning multilingual LLM output with English T5 features.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .features import (FeatureSequence, Space, load_feature_batch, pad_batch,
                       save_feature_batch)

_MAP_STREAM, _Z_STREAM, _SOURCE_STREAM, _LATENT_Z_STREAM, _LATENT_NOISE_STREAM = range(5)


def derived_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


@dataclass
class SyntheticTeacher:
    seed: int = 0
    d_z: int = 8
    d_llm: int = 48
    d_t5: int = 64
    t_out: int = 8
    languages: tuple[str, ...] = ("en", "zh")
    sigma: float = 0.05
    source_scale: float = 8.0
    target_scale: float = 1.0
    mix_strength: float = 0.3
    offset_scale: float = 0.5
    min_len: int = 4
    max_len: int = 16
    latent_tokens: int = 16
    latent_channels: int = 4
    latent_gain: float = 1.0
    latent_noise: float = 0.01
    maps: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.languages = tuple(self.languages)
        if self.sigma < 0 or self.latent_noise < 0:
            raise ConfigError("teacher noise levels must be non-negative")
        if not self.languages:
            raise ConfigError("teacher needs at least one language")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"bad length range [{self.min_len}, {self.max_len}]")
        rng = derived_rng(self.seed, _MAP_STREAM)
        dz = self.d_z
        self.maps = {
            "A": {lang: rng.normal(0, 1 / np.sqrt(dz), (dz, self.d_llm)) for lang in self.languages},
            "B": rng.normal(0, 1 / np.sqrt(dz), (dz, self.d_t5)),
            "M": np.eye(dz) + self.mix_strength * rng.normal(0, 1 / np.sqrt(dz),
                                                             (self.t_out, dz, dz)),
            "c": self.offset_scale * rng.normal(0, 1, (self.t_out, dz)),
            "D": rng.normal(0, 1 / np.sqrt(dz),
                            (dz, self.latent_tokens * self.latent_channels)),
        }

    def params(self) -> dict:
        d = asdict(self)
        d.pop("maps", None)
        d["languages"] = list(self.languages)
        return d

    def lang_code(self, lang: str) -> int:
        try:
            return self.languages.index(lang)
        except ValueError:
            raise ConfigError(f"unknown language {lang!r}; teacher has {self.languages}") from None

    # -- per-sample pieces ----------------------------------------------------
    def z(self, index: int) -> np.ndarray:
        return derived_rng(self.seed, _Z_STREAM, index).normal(size=self.d_z)

    def latent_z(self, index: int) -> np.ndarray:
        return derived_rng(self.seed, _LATENT_Z_STREAM, index).normal(size=self.d_z)

    def source(self, z: np.ndarray, lang: str, rng: np.random.Generator) -> FeatureSequence:
        a = self.maps["A"][lang]
        length = int(rng.integers(self.min_len, self.max_len + 1))
        tokens = np.tile(z @ a, (length, 1)) + self.sigma * rng.normal(size=(length, self.d_llm))
        return FeatureSequence.full(self.source_scale * tokens, Space.LLM)

    def target_tokens(self, z: np.ndarray) -> np.ndarray:
        mixed = np.einsum("d,tde->te", z, self.maps["M"]) + self.maps["c"]
        return self.target_scale * mixed @ self.maps["B"]

    def target(self, z: np.ndarray) -> FeatureSequence:
        return FeatureSequence.full(self.target_tokens(z), Space.T5)

    def latent(self, z: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        x0 = np.tanh(self.latent_gain * z @ self.maps["D"])
        if rng is not None and self.latent_noise > 0:
            x0 = x0 + self.latent_noise * rng.normal(size=x0.shape)
        return x0.reshape(self.latent_tokens, self.latent_channels)

    def pair(self, index: int, lang: str) -> tuple[FeatureSequence, FeatureSequence]:
        z = self.z(index)
        rng = derived_rng(self.seed, _SOURCE_STREAM, self.lang_code(lang), index)
        return self.source(z, lang, rng), self.target(z)


def synth_teacher_pairs(teacher: SyntheticTeacher, n: int, lang: str,
                        start: int = 0) -> list[tuple[FeatureSequence, FeatureSequence]]:
    """``n`` (llm source, t5 target) pairs for sample indices ``start .. start + n - 1``."""
    teacher.lang_code(lang)
    return [teacher.pair(i, lang) for i in range(start, start + n)]


def mixed_language_pairs(teacher: SyntheticTeacher, n: int, start: int = 0):
    """Pairs with languages assigned round-robin by index; returns (pairs, languages)."""
    langs = [teacher.languages[i % len(teacher.languages)] for i in range(start, start + n)]
    return [teacher.pair(i, lang) for i, lang in zip(range(start, start + n), langs)], langs


def synth_conditioned_latents(teacher: SyntheticTeacher, n: int, start: int = 0,
                              lang: str | None = None) -> list[tuple[FeatureSequence, np.ndarray]]:
    """(llm condition, clean latent) pairs sharing one semantic draw per sample."""
    if n < 1:
        raise ConfigError(f"need at least one sample, got {n}")
    out = []
    for i in range(start, start + n):
        z = teacher.latent_z(i)
        use = lang or teacher.languages[i % len(teacher.languages)]
        src_rng = derived_rng(teacher.seed, _SOURCE_STREAM + 10, teacher.lang_code(use), i)
        noise_rng = derived_rng(teacher.seed, _LATENT_NOISE_STREAM, i)
        out.append((teacher.source(z, use, src_rng), teacher.latent(z, noise_rng)))
    return out


# -- closed-form oracles ---------------------------------------------------------

def pooled_features(seqs) -> np.ndarray:
    """Masked mean over tokens with an appended bias column."""
    values, mask = pad_batch(seqs)
    w = mask[..., None].astype(np.float64)
    pooled = (values * w).sum(1) / w.sum(1)
    return np.hstack([pooled, np.ones((len(seqs), 1))])


def fit_normal_equations(x: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    gram = x.T @ x
    gram += ridge * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0])
    return np.linalg.solve(gram, x.T @ y)


def least_squares_oracle(train_pairs, eval_pairs) -> float:
    """Mean row cosine of a linear map fit by normal equations on pooled sources."""
    x = pooled_features([s for s, _ in train_pairs])
    y = np.stack([t.values.reshape(-1) for _, t in train_pairs])
    w = fit_normal_equations(x, y)
    xe = pooled_features([s for s, _ in eval_pairs])
    targets = np.stack([t.values for _, t in eval_pairs])
    pred = (xe @ w).reshape(targets.shape)
    cos = (pred * targets).sum(-1) / np.maximum(
        np.linalg.norm(pred, axis=-1) * np.linalg.norm(targets, axis=-1), 1e-12)
    return float(cos.mean())


def conditioning_r2(train, evaluate) -> float:
    """Fraction of latent variance explained by a least-squares fit on pooled conditions."""
    x = pooled_features([c for c, _ in train])
    y = np.stack([x0.reshape(-1) for _, x0 in train])
    w = fit_normal_equations(x, y)
    xe = pooled_features([c for c, _ in evaluate])
    ye = np.stack([x0.reshape(-1) for _, x0 in evaluate])
    resid = ye - xe @ w
    return float(1.0 - (resid ** 2).sum() / ((ye - ye.mean(0)) ** 2).sum())


# -- dataset dump/load -------------------------------------------------------------

def save_pair_dataset(path: str | Path, pairs, languages, teacher: SyntheticTeacher | None = None,
                      start: int = 0) -> None:
    """Interleaved (source, target) records in LDFS plus a JSON sidecar at ``path + '.json'``."""
    path = Path(path)
    save_feature_batch(path, [seq for pair in pairs for seq in pair])
    header = {
        "kind": "alignment-pairs",
        "count": len(pairs),
        "start": start,
        "languages": list(languages),
        "teacher": teacher.params() if teacher is not None else None,
    }
    if teacher is not None:
        header["teacher_seed"] = teacher.seed
        header["sigma"] = teacher.sigma
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")


def load_pair_dataset(path: str | Path):
    """Return ``(pairs, languages, header)``; languages default to ``'unk'`` without a sidecar."""
    path = Path(path)
    seqs = load_feature_batch(path)
    if len(seqs) % 2:
        raise DataError(f"{path}: odd number of records ({len(seqs)}) in a pair dataset")
    pairs = list(zip(seqs[0::2], seqs[1::2]))
    for i, (src, tgt) in enumerate(pairs):
        if src.space is not Space.LLM or tgt.space is not Space.T5:
            raise DataError(
                f"{path}: pair {i} has spaces ({src.space.value}, {tgt.space.value}), "
                f"expected (llm, t5)")
    sidecar = Path(str(path) + ".json")
    header = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    languages = header.get("languages") or ["unk"] * len(pairs)
    if len(languages) != len(pairs):
        raise DataError(f"{sidecar}: {len(languages)} language tags for {len(pairs)} pairs")
    return pairs, languages, header


__all__ = [
    "SyntheticTeacher", "synth_teacher_pairs", "mixed_language_pairs",
    "synth_conditioned_latents", "least_squares_oracle", "conditioning_r2",
    "pooled_features", "save_pair_dataset", "load_pair_dataset", "derived_rng",
]
