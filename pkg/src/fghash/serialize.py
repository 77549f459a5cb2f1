"""Binary persistence helpers shared by every artifact format.

Tensor framing: u32 rank, u32 per dimension, then the raw little-endian
float64 payload. Container files append a CRC32 of everything before it.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import ChecksumError, DataFormatError


def tensor_bytes(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f8")
    out = struct.pack("<I", a.ndim)
    out += struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b""
    return out + a.tobytes()


class ByteReader:
    """Sequential reader that turns short reads into DataFormatError."""

    def __init__(self, data: bytes, name: str = "file"):
        self._data = data
        self._pos = 0
        self._name = name

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise DataFormatError(f"{self._name}: truncated (needed {n} bytes at offset {self._pos})")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def remaining(self) -> int:
        return len(self._data) - self._pos

    @property
    def pos(self) -> int:
        return self._pos


def read_tensor(reader: ByteReader) -> np.ndarray:
    rank = reader.u32()
    if rank > 8:
        raise DataFormatError(f"implausible tensor rank {rank}")
    dims = [reader.u32() for _ in range(rank)]
    count = 1
    for d in dims:
        count *= d
    raw = reader.take(8 * count)
    return np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)


def json_block(obj) -> bytes:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(payload)) + payload


def read_json_block(reader: ByteReader):
    length = reader.u32()
    payload = reader.take(length)
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"malformed JSON block: {exc}") from exc


def finish_with_crc(buf: bytearray) -> bytes:
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def open_checked(path, name: str) -> ByteReader:
    """Read a CRC32-terminated file, verify the checksum, return the body."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise DataFormatError(f"{name}: truncated (no room for checksum)")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumError(f"{name}: CRC32 mismatch (stored {stored:#010x}, computed {actual:#010x})")
    return ByteReader(body, name)


def write_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Checkpoint = length-prefixed descriptor JSON + named tensors + CRC32."""
    meta = dict(meta)
    meta["tensors"] = list(tensors.keys())
    buf = bytearray(json_block(meta))
    for arr in tensors.values():
        buf += tensor_bytes(arr)
    with open(path, "wb") as fh:
        fh.write(finish_with_crc(buf))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    reader = open_checked(path, "checkpoint")
    meta = read_json_block(reader)
    names = meta.get("tensors")
    if not isinstance(names, list):
        raise DataFormatError("checkpoint: descriptor lacks a tensor name list")
    tensors = {str(name): read_tensor(reader) for name in names}
    if reader.remaining():
        raise DataFormatError(f"checkpoint: {reader.remaining()} trailing bytes")
    return meta, tensors
