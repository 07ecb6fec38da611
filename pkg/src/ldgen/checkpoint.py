"""LDGN checkpoint files.

Layout (little-endian)::

    magic   b"LDGN"
    version u32
    length  u64          byte length of the body
    sha256  32 bytes     digest of the body
    body:
      config      u32 length + canonical JSON
      config_sha  32 bytes (sha256 of the canonical JSON)
      coefficient f64
      blobs       u32 count, then per blob: u16 name length, name, u8 ndim,
                  ndim x u32 extents, f64 values
      optimizer   u8 flag; if set: u32 length + JSON header, then m and v
                  arrays per named parameter in header order
      rng state   u32 length + JSON (empty object when absent)

Any single-byte change is caught by the magic/version/length checks or the
body digest.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigDriftWarning, DigestError, FormatError, VersionError

MAGIC = b"LDGN"
VERSION = 1
_HEAD = struct.Struct("<4sIQ32s")


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    coefficient: float = 1.0
    optimizer: dict | None = None
    rng_state: dict | None = None
    version: int = VERSION
    extra: dict = field(default_factory=dict)

    def config_digest(self) -> str:
        return hashlib.sha256(_canonical(self.config).encode("utf-8")).hexdigest()

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Blobs under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.params.items() if k.startswith(p)}

    def subset_all(self, prefix: str) -> dict[str, np.ndarray]:
        """Blobs under ``prefix.`` keeping their full names."""
        p = prefix + "."
        return {k: v for k, v in self.params.items() if k.startswith(p)}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _pack_str(s: str, width: str = "<I") -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(width, len(raw)) + raw


def _pack_array(arr: np.ndarray) -> bytes:
    # asarray, not ascontiguousarray: the latter promotes 0-d gates to shape (1,)
    arr = np.asarray(arr, dtype="<f8")
    return (struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            + arr.tobytes())


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = _canonical(ckpt.config)
    parts = [_pack_str(cfg), hashlib.sha256(cfg.encode("utf-8")).digest(),
             struct.pack("<d", ckpt.coefficient), struct.pack("<I", len(ckpt.params))]
    for name in sorted(ckpt.params):
        parts.append(_pack_str(name, "<H"))
        parts.append(_pack_array(ckpt.params[name]))
    if ckpt.optimizer is None:
        parts.append(b"\x00")
    else:
        opt = ckpt.optimizer
        names = sorted(opt["m"])
        header = {k: v for k, v in opt.items() if k not in ("m", "v")}
        header["names"] = names
        parts.append(b"\x01")
        parts.append(_pack_str(_canonical(header)))
        for name in names:
            parts.append(_pack_array(opt["m"][name]))
            parts.append(_pack_array(opt["v"][name]))
    parts.append(_pack_str(_canonical(ckpt.rng_state or {})))
    body = b"".join(parts)
    return _HEAD.pack(MAGIC, ckpt.version, len(body), hashlib.sha256(body).digest()) + body


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint body truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, width: str = "<I") -> str:
        (n,) = self.unpack(width)
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in checkpoint string: {exc}") from None

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        raw = self.take(8 * count)
        return np.frombuffer(raw, "<f8").astype(np.float64).reshape(shape)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < _HEAD.size:
        raise FormatError("checkpoint truncated: header incomplete")
    magic, version, length, digest = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError("not an LDGN checkpoint (bad magic)")
    if version > VERSION:
        raise VersionError(f"checkpoint version {version} is newer than supported {VERSION}")
    if version < 1:
        raise FormatError(f"invalid checkpoint version {version}")
    body = buf[_HEAD.size:]
    if len(body) != length:
        raise FormatError(f"checkpoint body is {len(body)} bytes, header says {length}")
    if hashlib.sha256(body).digest() != digest:
        raise DigestError("checkpoint body digest mismatch (file corrupted)")

    r = _Reader(body)
    try:
        cfg_text = r.string()
        cfg_digest = r.take(32)
        if hashlib.sha256(cfg_text.encode("utf-8")).digest() != cfg_digest:
            raise DigestError("embedded config digest mismatch")
        config = json.loads(cfg_text)
        (coefficient,) = r.unpack("<d")
        (count,) = r.unpack("<I")
        params = {}
        for _ in range(count):
            name = r.string("<H")
            params[name] = r.array()
        (flag,) = r.unpack("<B")
        optimizer = None
        if flag == 1:
            header = json.loads(r.string())
            names = header.pop("names")
            m, v = {}, {}
            for name in names:
                m[name] = r.array()
                v[name] = r.array()
            optimizer = dict(header, m=m, v=v)
        elif flag != 0:
            raise FormatError(f"invalid optimizer flag {flag}")
        rng_state = json.loads(r.string()) or None
    except (struct.error, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed checkpoint body: {exc}") from None
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} trailing bytes after checkpoint body")
    return Checkpoint(config, params, coefficient, optimizer, rng_state, version)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path, expected_config: dict | None = None,
                    strict: bool = False) -> Checkpoint:
    """Read and verify a checkpoint.

    When ``expected_config`` is given, a differing config digest warns with
    :class:`ConfigDriftWarning`, or raises :class:`DigestError` if ``strict``.
    """
    ckpt = decode_checkpoint(Path(path).read_bytes())
    if expected_config is not None:
        want = hashlib.sha256(_canonical(expected_config).encode("utf-8")).hexdigest()
        if want != ckpt.config_digest():
            msg = f"{path}: checkpoint config differs from the expected config"
            if strict:
                raise DigestError(msg)
            warnings.warn(msg, ConfigDriftWarning, stacklevel=2)
    return ckpt
