"""Token-feature sequences, RMS scale calibration and the LDFS batch format."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (DegenerateMaskError, DegenerateStatisticsError, DimensionError,
                     FormatError, SpaceTagError, VersionError)
from .tensor import Tensor


class Space(str, enum.Enum):
    LLM = "llm"
    T5 = "t5"
    ALIGNED = "aligned"
    REFINED = "refined"
    # image-latent tokens fed to the refiner; not one of the text spaces
    LATENT = "latent"


_SPACE_CODES = {Space.LLM: 0, Space.T5: 1, Space.ALIGNED: 2, Space.REFINED: 3, Space.LATENT: 4}
_CODE_SPACES = {v: k for k, v in _SPACE_CODES.items()}


@dataclass
class FeatureSequence:
    """A ``[L, D]`` token matrix with a validity mask and a source-space tag.

    ``tokens`` is kept as a :class:`Tensor` so sequences produced by the
    adapter or refiner stay attached to the autodiff graph.
    """

    tokens: Tensor
    mask: np.ndarray
    space: Space

    def __post_init__(self):
        if not isinstance(self.tokens, Tensor):
            self.tokens = Tensor(self.tokens)
        self.space = Space(self.space)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.tokens.ndim != 2:
            raise DimensionError(f"tokens must be [L x D], got shape {self.tokens.shape}")
        if self.mask.shape != (self.tokens.shape[0],):
            raise DimensionError(
                f"mask shape {self.mask.shape} does not match length {self.tokens.shape[0]}")
        if not self.mask.any():
            raise DegenerateMaskError("feature sequence has no valid positions")
        if not np.isfinite(self.tokens.data).all():
            raise ValueError("feature sequence contains non-finite values")

    @classmethod
    def full(cls, tokens, space: Space | str) -> FeatureSequence:
        t = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        return cls(t, np.ones(t.shape[0], dtype=bool), Space(space))

    @property
    def values(self) -> np.ndarray:
        return self.tokens.data

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]

    def detach(self) -> FeatureSequence:
        return FeatureSequence(Tensor(self.values.copy()), self.mask.copy(), self.space)


def pad_batch(seqs: Sequence[FeatureSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into ``[B, Lmax, D]`` values and a ``[B, Lmax]`` mask (padding masked)."""
    if not seqs:
        raise ValueError("cannot pad an empty batch")
    width = seqs[0].width
    lmax = max(s.length for s in seqs)
    values = np.zeros((len(seqs), lmax, width))
    mask = np.zeros((len(seqs), lmax), dtype=bool)
    for i, s in enumerate(seqs):
        if s.width != width:
            raise DimensionError(f"sequence {i} has width {s.width}, expected {width}")
        values[i, :s.length] = s.values
        mask[i, :s.length] = s.mask
    return values, mask


def masked_rms(seq: FeatureSequence) -> float:
    rows = seq.values[seq.mask]
    return float(np.sqrt(np.mean(rows * rows)))


def _pooled_sq_sum(batch: Iterable[FeatureSequence]) -> tuple[float, int]:
    total, count = 0.0, 0
    for seq in batch:
        rows = seq.values[seq.mask]
        total += float(np.sum(rows * rows))
        count += rows.size
    return total, count


@dataclass(frozen=True)
class ScaleCalibration:
    coefficient: float
    source_rms: float
    target_rms: float
    sample_count: int

    def __post_init__(self):
        if not self.coefficient > 0:
            raise DegenerateStatisticsError(f"coefficient must be positive, got {self.coefficient}")
        if self.source_rms > 0 and abs(self.coefficient - self.target_rms / self.source_rms) \
                > 1e-12 * max(1.0, self.coefficient):
            raise ValueError("coefficient must equal target_rms / source_rms")


def calibrate_scale_coefficient(llm_batch: Sequence[FeatureSequence],
                                t5_batch: Sequence[FeatureSequence]) -> ScaleCalibration:
    """Coefficient that maps the pooled masked RMS of ``llm_batch`` onto that of ``t5_batch``."""
    if not llm_batch or not t5_batch:
        raise ValueError("calibration batches must be non-empty")
    s_sum, s_count = _pooled_sq_sum(llm_batch)
    t_sum, t_count = _pooled_sq_sum(t5_batch)
    source_rms = float(np.sqrt(s_sum / s_count))
    target_rms = float(np.sqrt(t_sum / t_count))
    if source_rms == 0.0 or target_rms == 0.0:
        raise DegenerateStatisticsError(
            f"zero RMS in calibration (source={source_rms}, target={target_rms})")
    return ScaleCalibration(target_rms / source_rms, source_rms, target_rms, len(llm_batch))


def scale_features(seq: FeatureSequence, calib: ScaleCalibration | float) -> FeatureSequence:
    if seq.space is not Space.LLM:
        raise SpaceTagError(f"scale_features expects an llm sequence, got {seq.space.value}")
    c = calib.coefficient if isinstance(calib, ScaleCalibration) else float(calib)
    return FeatureSequence(seq.tokens * c, seq.mask.copy(), seq.space)


# -- LDFS batch files ---------------------------------------------------------
#
# magic b"LDFS" | version u32 | records...
# record: L u32 | D u32 | space u8 | mask bits (ceil(L/8) bytes, LSB first) | L*D f64
# All integers and floats little-endian.

LDFS_MAGIC = b"LDFS"
LDFS_VERSION = 1
_REC_HEAD = struct.Struct("<IIB")


def encode_feature_batch(seqs: Iterable[FeatureSequence]) -> bytes:
    parts = [LDFS_MAGIC, struct.pack("<I", LDFS_VERSION)]
    for seq in seqs:
        parts.append(_REC_HEAD.pack(seq.length, seq.width, _SPACE_CODES[seq.space]))
        parts.append(np.packbits(seq.mask, bitorder="little").tobytes())
        parts.append(np.ascontiguousarray(seq.values, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_feature_batch(buf: bytes) -> list[FeatureSequence]:
    if len(buf) < 8 or buf[:4] != LDFS_MAGIC:
        raise FormatError("not an LDFS feature batch (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version > LDFS_VERSION:
        raise VersionError(f"LDFS version {version} is newer than supported {LDFS_VERSION}")
    pos = 8
    out = []
    while pos < len(buf):
        if pos + _REC_HEAD.size > len(buf):
            raise FormatError(f"truncated record header at byte {pos}")
        length, width, code = _REC_HEAD.unpack_from(buf, pos)
        pos += _REC_HEAD.size
        if code not in _CODE_SPACES or length < 1 or width < 1:
            raise FormatError(f"invalid record header at byte {pos - _REC_HEAD.size}")
        nmask = (length + 7) // 8
        nvals = length * width * 8
        if pos + nmask + nvals > len(buf):
            raise FormatError(f"truncated record payload at byte {pos}")
        mask = np.unpackbits(np.frombuffer(buf, np.uint8, nmask, pos),
                             count=length, bitorder="little").astype(bool)
        pos += nmask
        values = np.frombuffer(buf, "<f8", length * width, pos).astype(np.float64)
        pos += nvals
        try:
            out.append(FeatureSequence(Tensor(values.reshape(length, width)), mask,
                                       _CODE_SPACES[code]))
        except (ValueError, DegenerateMaskError) as exc:
            raise FormatError(f"invalid record {len(out)}: {exc}") from exc
    return out


def save_feature_batch(path: str | Path, seqs: Iterable[FeatureSequence]) -> None:
    Path(path).write_bytes(encode_feature_batch(seqs))


def load_feature_batch(path: str | Path) -> list[FeatureSequence]:
    return decode_feature_batch(Path(path).read_bytes())
