"""Little-endian binary codec shared by the guidance cache, clip files and checkpoints.

Every file starts with a 4-byte magic and a u32 version and ends with a
CRC-32 of all preceding bytes. Decoding failures raise a subclass of
:class:`DecodeError`; nothing partially decoded is ever returned.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from typing import Any

import numpy as np

from .errors import DataError


class DecodeError(DataError):
    """Base class for every container decoding failure."""


class BadMagicError(DecodeError):
    pass


class UnsupportedVersionError(DecodeError):
    pass


class TruncatedSectionError(DecodeError):
    def __init__(self, section: str, needed: int, available: int):
        super().__init__(f"truncated section '{section}': needs {needed} bytes, {available} left")
        self.section = section


class ChecksumError(DecodeError):
    pass


class FormatError(DecodeError):
    """Structurally invalid content (bad dims, trailing bytes, bad UTF-8, ...)."""


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


class Writer:
    def __init__(self) -> None:
        self.buf = bytearray()

    def raw(self, b: bytes) -> None:
        self.buf += b

    def u32(self, v: int) -> None:
        self.buf += struct.pack("<I", v)

    def u64(self, v: int) -> None:
        self.buf += struct.pack("<Q", v)

    def f32(self, arr: np.ndarray) -> None:
        self.buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()

    def f64(self, arr: np.ndarray) -> None:
        self.buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()

    def text(self, s: str) -> None:
        b = s.encode("utf-8")
        self.u32(len(b))
        self.buf += b

    def finish(self) -> bytes:
        """Append the CRC trailer and return the file bytes."""
        self.u32(crc32(bytes(self.buf)))
        return bytes(self.buf)


class Reader:
    def __init__(self, data: bytes) -> None:
        self.data = memoryview(data)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, section: str) -> memoryview:
        if n < 0 or n > self.remaining:
            raise TruncatedSectionError(section, n, self.remaining)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, section: str) -> int:
        return struct.unpack("<I", self.take(4, section))[0]

    def u64(self, section: str) -> int:
        return struct.unpack("<Q", self.take(8, section))[0]

    def f32(self, count: int, section: str) -> np.ndarray:
        raw = self.take(4 * count, section)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)

    def f64(self, count: int, section: str) -> np.ndarray:
        raw = self.take(8 * count, section)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def text(self, section: str) -> str:
        n = self.u32(section + ".length")
        raw = self.take(n, section)
        try:
            return bytes(raw).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"section '{section}' is not valid UTF-8: {exc}") from None

    def check_magic(self, magic: bytes) -> None:
        got = bytes(self.take(len(magic), "magic")) if self.remaining >= len(magic) else bytes(self.data)
        if got != magic:
            raise BadMagicError(f"bad magic {got!r}, expected {magic!r}")

    def check_version(self, supported: int) -> int:
        v = self.u32("version")
        if v != supported:
            raise UnsupportedVersionError(f"unsupported version {v}, this reader handles {supported}")
        return v

    def finish(self) -> None:
        """Verify the CRC trailer covering everything before it."""
        body_end = self.pos
        stored = self.u32("crc")
        if self.remaining:
            raise FormatError(f"{self.remaining} unexpected trailing bytes after checksum")
        actual = crc32(bytes(self.data[:body_end]))
        if stored != actual:
            raise ChecksumError(f"checksum mismatch: stored {stored:08x}, computed {actual:08x}")


# --- tagged-section container -------------------------------------------------

_KIND_F32, _KIND_F64, _KIND_TEXT, _KIND_U64 = 0, 1, 2, 3
_MAX_RANK = 8


def encode_sections(magic: bytes, version: int, sections: dict[str, Any]) -> bytes:
    """Serialize named sections in insertion order.

    Values may be float arrays (stored f32 unless float64), str, int (u64) or
    JSON-able dicts (stored as text).
    """
    w = Writer()
    w.raw(magic)
    w.u32(version)
    w.u32(len(sections))
    for tag, value in sections.items():
        w.text(tag)
        if isinstance(value, str):
            w.u32(_KIND_TEXT)
            w.text(value)
        elif isinstance(value, dict):
            w.u32(_KIND_TEXT)
            w.text(json.dumps(value, sort_keys=True))
        elif isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            w.u32(_KIND_U64)
            w.u64(int(value))
        else:
            arr = np.asarray(value)
            kind = _KIND_F64 if arr.dtype == np.float64 else _KIND_F32
            w.u32(kind)
            w.u32(arr.ndim)
            for s in arr.shape:
                w.u32(s)
            (w.f64 if kind == _KIND_F64 else w.f32)(arr)
    return w.finish()


def decode_sections(data: bytes, magic: bytes, version: int) -> dict[str, Any]:
    r = Reader(data)
    r.check_magic(magic)
    r.check_version(version)
    n = r.u32("section_count")
    out: dict[str, Any] = {}
    for i in range(n):
        tag = r.text(f"section[{i}].tag")
        kind = r.u32(f"{tag}.kind")
        if kind == _KIND_TEXT:
            out[tag] = r.text(tag)
        elif kind == _KIND_U64:
            out[tag] = r.u64(tag)
        elif kind in (_KIND_F32, _KIND_F64):
            ndim = r.u32(f"{tag}.rank")
            if ndim > _MAX_RANK:
                raise FormatError(f"section '{tag}' has implausible rank {ndim}")
            shape = tuple(r.u32(f"{tag}.shape") for _ in range(ndim))
            count = math.prod(shape)
            arr = r.f64(count, tag) if kind == _KIND_F64 else r.f32(count, tag)
            out[tag] = arr.reshape(shape)
        else:
            raise FormatError(f"section '{tag}' has unknown kind {kind}")
    r.finish()
    return out
