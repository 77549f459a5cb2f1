"""Hash layer: embeddings -> relaxed codes -> packed bits.

Training uses the relaxed code u = tanh(W z + bias), each component strictly
inside (-1, 1). Inference binarizes with sign (sign(0) = +1) and packs the
+/-1 code into 64-bit words, bit j of word j//64 set iff component j is +1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, DataFormatError, ShapeError
from .serialize import finish_with_crc, open_checked
from .tensor import Tensor

MAX_CODE_BITS = 512

_MAGIC = b"FGHV"


@dataclass
class HashParams:
    w: Tensor  # (k, c')
    bias: Tensor  # (k,)

    @property
    def bits(self) -> int:
        return self.w.shape[0]

    @classmethod
    def init(cls, bits: int, embed_dim: int, seed) -> "HashParams":
        """Random projection scaled 1/sqrt(c'), zero bias."""
        if not 1 <= bits <= MAX_CODE_BITS:
            raise ConfigError(f"code length must be in [1, {MAX_CODE_BITS}], got {bits}")
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (bits, embed_dim))
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(bits), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        return [self.w, self.bias]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {"hash_w": self.w.data, "hash_b": self.bias.data}


def hash_forward(z: Tensor, params: HashParams) -> Tensor:
    """u = tanh(W z + bias) for a single embedding (C',) or a batch (N,C')."""
    if z.ndim == 1:
        u = ops.tanh_act(ops.linear(ops.reshape(z, (1, -1)), params.w, params.bias))
        return ops.reshape(u, (params.bits,))
    if z.ndim != 2:
        raise ShapeError(f"embedding must be (C',) or (N,C'), got {z.shape}")
    return ops.tanh_act(ops.linear(z, params.w, params.bias))


def binarize(u: Tensor | np.ndarray) -> np.ndarray:
    """Sign of the relaxed code with sign(0) = +1."""
    arr = u.data if isinstance(u, Tensor) else np.asarray(u, dtype=np.float64)
    return np.where(arr >= 0.0, 1.0, -1.0)


def _check_code_entries(codes: np.ndarray) -> None:
    if not np.all(np.abs(codes) == 1.0):
        raise ShapeError("codes must contain only +1/-1 entries")


def words_per_code(bits: int) -> int:
    return (bits + 63) // 64


def pack_matrix(codes: np.ndarray) -> np.ndarray:
    """Pack (n, k) +/-1 codes into (n, ceil(k/64)) uint64 words."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    _check_code_entries(codes)
    n, k = codes.shape
    bits = (codes > 0).astype(np.uint8)
    packed = np.packbits(bits, axis=1, bitorder="little")
    nbytes = words_per_code(k) * 8
    buf = np.zeros((n, nbytes), dtype=np.uint8)
    buf[:, : packed.shape[1]] = packed
    return buf.view("<u8").copy()


def unpack_matrix(words: np.ndarray, bits: int) -> np.ndarray:
    words = np.atleast_2d(np.asarray(words, dtype="<u8"))
    if words.shape[1] != words_per_code(bits):
        raise ShapeError(f"expected {words_per_code(bits)} words per code, got {words.shape[1]}")
    raw = np.unpackbits(words.view(np.uint8), axis=1, bitorder="little")[:, :bits]
    return raw.astype(np.float64) * 2.0 - 1.0


def pack_code(code: np.ndarray) -> np.ndarray:
    """Pack one +/-1 code of length k into its uint64 words."""
    return pack_matrix(np.asarray(code)[None, :])[0]


def unpack_code(words: np.ndarray, bits: int) -> np.ndarray:
    return unpack_matrix(np.asarray(words)[None, :], bits)[0]


def _padding_ok(words: np.ndarray, bits: int) -> bool:
    if bits % 64 == 0:
        return True
    mask = np.uint64((1 << (bits % 64)) - 1)
    return bool(np.all(words[:, -1] & ~mask == 0))


@dataclass
class BitCodeMatrix:
    """Packed +/-1 codes; padding bits beyond k are always zero."""

    words: np.ndarray  # (n, ceil(k/64)) uint64
    bits: int

    def __post_init__(self) -> None:
        self.words = np.ascontiguousarray(self.words, dtype="<u8")
        if self.words.ndim != 2 or self.words.shape[1] != words_per_code(self.bits):
            raise ShapeError(f"words shape {self.words.shape} invalid for k={self.bits}")
        if not _padding_ok(self.words, self.bits):
            raise DataFormatError("nonzero padding bits in packed codes")

    @property
    def count(self) -> int:
        return self.words.shape[0]

    @classmethod
    def from_codes(cls, codes: np.ndarray) -> "BitCodeMatrix":
        codes = np.atleast_2d(codes)
        return cls(pack_matrix(codes), codes.shape[1])

    def to_codes(self) -> np.ndarray:
        return unpack_matrix(self.words, self.bits)


def save_hash_db(path, codes: BitCodeMatrix, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.shape != (codes.count,):
        raise ShapeError(f"labels {labels.shape} do not match {codes.count} codes")
    buf = bytearray(_MAGIC)
    buf += struct.pack("<II", codes.bits, codes.count)
    buf += codes.words.astype("<u8").tobytes()
    buf += labels.astype("<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(finish_with_crc(buf))


def load_hash_db(path) -> tuple[BitCodeMatrix, np.ndarray]:
    reader = open_checked(path, "hash database")
    if reader.take(4) != _MAGIC:
        raise DataFormatError("hash database: bad magic")
    bits, n = struct.unpack("<II", reader.take(8))
    if not 1 <= bits <= MAX_CODE_BITS:
        raise DataFormatError(f"hash database: implausible code length {bits}")
    wpc = words_per_code(bits)
    words = np.frombuffer(reader.take(8 * n * wpc), dtype="<u8").reshape(n, wpc)
    labels = np.frombuffer(reader.take(4 * n), dtype="<u4").astype(np.uint32)
    if reader.remaining():
        raise DataFormatError(f"hash database: {reader.remaining()} trailing bytes")
    return BitCodeMatrix(words.copy(), bits), labels
