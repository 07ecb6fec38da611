"""Hierarchical captions, level sampling and human-instruction templates.

Corpus files are UTF-8 JSON lines, one record per line::

    {"id": "img-0001", "language": "en", "levels": ["a fox", ..., "<detailed>"]}

``levels`` holds exactly six captions ordered from simple to detailed.

Template files are a UTF-8 JSON list of ``{"id": ..., "body": ...}`` objects;
each body contains the ``{caption}`` placeholder exactly once.

The built-in bodies for ``ours`` and ``hi-01`` .. ``hi-05`` are neutral
placeholders written for this package, not the original instruction texts;
load real bodies from a template file when they are available. The proxy
score is a bag-of-words cosine and is not comparable to CLIP scores.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CaptionLintWarning, CorpusParseError, SchemaError

NUM_LEVELS = 6
PLACEHOLDER = "{caption}"


@dataclass(frozen=True)
class CaptionRecord:
    id: str
    levels: tuple[str, ...]
    language: str = "en"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) != NUM_LEVELS:
            raise SchemaError(
                f"record {self.id!r} has {len(self.levels)} levels, expected {NUM_LEVELS}")
        for i, text in enumerate(self.levels):
            if not isinstance(text, str) or not text.strip():
                raise SchemaError(f"record {self.id!r} level {i} is empty or not a string")

    def to_json(self) -> dict:
        return {"id": self.id, "language": self.language, "levels": list(self.levels)}


def _record_from_obj(obj, line: int) -> CaptionRecord:
    if not isinstance(obj, dict):
        raise CorpusParseError("record must be a JSON object", line)
    missing = {"id", "levels"} - set(obj)
    if missing:
        raise CorpusParseError(f"record is missing fields {sorted(missing)}", line)
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise CorpusParseError("record id must be a non-empty string", line)
    if not isinstance(obj["levels"], list):
        raise CorpusParseError(f"record {obj['id']!r}: levels must be a list", line)
    try:
        return CaptionRecord(obj["id"], obj["levels"], obj.get("language", "en"))
    except SchemaError as exc:
        raise SchemaError(f"line {line}: {exc}") from None


def parse_caption_corpus(lines: Iterable[str]) -> list[CaptionRecord]:
    records: list[CaptionRecord] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"invalid JSON ({exc.msg})", lineno) from None
        rec = _record_from_obj(obj, lineno)
        if rec.id in seen:
            raise SchemaError(
                f"line {lineno}: duplicate record id {rec.id!r} (first seen on line {seen[rec.id]})")
        seen[rec.id] = lineno
        counts = [len(level.split()) for level in rec.levels]
        if any(b < a for a, b in zip(counts, counts[1:])):
            warnings.warn(f"line {lineno}: record {rec.id!r} level word counts {counts} "
                          f"are not non-decreasing", CaptionLintWarning, stacklevel=3)
        records.append(rec)
    return records


def load_caption_corpus(path: str | Path) -> list[CaptionRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_caption_corpus(fh)


def save_caption_corpus(path: str | Path, records: Iterable[CaptionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def sample_caption_level(record: CaptionRecord, rng: np.random.Generator,
                         weights: Sequence[float] | None = None) -> tuple[int, str]:
    """Draw a level uniformly (or by ``weights``) and return ``(index, caption)``."""
    if weights is None:
        index = int(rng.integers(NUM_LEVELS))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (NUM_LEVELS,) or (w < 0).any() or not w.sum() > 0:
            raise ValueError(f"weights must be {NUM_LEVELS} non-negative values with positive sum")
        index = int(rng.choice(NUM_LEVELS, p=w / w.sum()))
    return index, record.levels[index]


# -- instruction templates -------------------------------------------------------

@dataclass(frozen=True)
class InstructionTemplate:
    id: str
    body: str

    def __post_init__(self):
        count = self.body.count(PLACEHOLDER)
        if count != 1:
            raise SchemaError(
                f"template {self.id!r} must contain {PLACEHOLDER} exactly once, found {count}")


BUILTIN_TEMPLATES: dict[str, InstructionTemplate] = {
    t.id: t for t in [
        InstructionTemplate("no-hi", PLACEHOLDER),
        InstructionTemplate(
            "ours",
            "Rewrite the image description below. Keep every stated object, attribute and "
            "relation, add nothing that is not stated, and keep roughly the same length.\n"
            "Description: {caption}"),
        InstructionTemplate("hi-01", "Describe the following image in detail: {caption}"),
        InstructionTemplate("hi-02", "Summarize this caption concisely: {caption}"),
        InstructionTemplate("hi-03", "Expand this caption into a vivid scene description: {caption}"),
        InstructionTemplate(
            "hi-04", "List the objects, colors and layout mentioned here, then restate it: {caption}"),
        InstructionTemplate(
            "hi-05", "You are an image captioner. Produce a faithful caption for: {caption}"),
    ]
}


def load_templates(path: str | Path | None = None) -> dict[str, InstructionTemplate]:
    """Built-in registry, overridden/extended by the entries of an optional template file."""
    registry = dict(BUILTIN_TEMPLATES)
    if path is None:
        return registry
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: template file must be a JSON list")
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or not isinstance(item.get("id"), str) \
                or not isinstance(item.get("body"), str):
            raise SchemaError(f"{path}: entry {i} needs string fields 'id' and 'body'")
        registry[item["id"]] = InstructionTemplate(item["id"], item["body"])
    return registry


def apply_instruction_template(template: InstructionTemplate, caption: str) -> str:
    if template.body.count(PLACEHOLDER) != 1:
        raise SchemaError(f"template {template.id!r} is missing its {PLACEHOLDER} placeholder")
    prefix, suffix = template.body.split(PLACEHOLDER)
    # concatenation, not str.format/replace: the caption is copied verbatim even
    # when it contains braces or the placeholder text itself
    return prefix + caption + suffix


def caption_span(template: InstructionTemplate, prompt: str) -> tuple[int, int]:
    """Character span of the embedded caption inside a prompt built from ``template``."""
    prefix, suffix = template.body.split(PLACEHOLDER)
    return len(prefix), len(prompt) - len(suffix)


# -- proxy scoring ---------------------------------------------------------------

def proxy_align_score(text_a: str, text_b: str) -> float:
    """Cosine of lowercased whitespace-token count vectors, in [0, 1]."""
    if not text_a.strip() or not text_b.strip():
        raise ValueError("proxy_align_score needs two non-empty texts")
    ca, cb = Counter(text_a.lower().split()), Counter(text_b.lower().split())
    dot = sum(n * cb[w] for w, n in ca.items())
    norm = math.sqrt(sum(n * n for n in ca.values())) * math.sqrt(sum(n * n for n in cb.values()))
    return min(1.0, max(0.0, dot / norm))


@dataclass
class ProxyScoreReport:
    template_id: str
    level_scores: list[float]
    sample_count: int

    def to_json(self) -> dict:
        return asdict(self)


def score_template(records: Sequence[CaptionRecord], template: InstructionTemplate,
                   responses: Sequence[CaptionRecord] | None = None) -> ProxyScoreReport:
    """Mean proxy score per level between each original caption and its counterpart.

    With ``responses`` (externally rewritten captions keyed by record id) the
    response text is compared; otherwise the templated prompt itself is.
    """
    by_id = {r.id: r for r in responses} if responses is not None else None
    sums = [0.0] * NUM_LEVELS
    count = 0
    for rec in records:
        if by_id is not None:
            other = by_id.get(rec.id)
            if other is None:
                continue
            texts = other.levels
        else:
            texts = [apply_instruction_template(template, c) for c in rec.levels]
        for i, (orig, text) in enumerate(zip(rec.levels, texts)):
            sums[i] += proxy_align_score(orig, text)
        count += 1
    scores = [s / count if count else 0.0 for s in sums]
    return ProxyScoreReport(template.id, scores, count)


def write_reports(path: str | Path, reports: Iterable[ProxyScoreReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_json(), sort_keys=True) + "\n")
