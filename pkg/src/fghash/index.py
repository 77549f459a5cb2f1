"""Immutable Hamming index over packed database codes with exact top-K search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeError
from .hash_layer import BitCodeMatrix, load_hash_db, pack_code, words_per_code


@dataclass(frozen=True)
class HammingIndex:
    codes: BitCodeMatrix
    labels: np.ndarray  # (n,) uint32

    @property
    def count(self) -> int:
        return self.codes.count

    @property
    def bits(self) -> int:
        return self.codes.bits


def build_index(codes: BitCodeMatrix, labels: np.ndarray) -> HammingIndex:
    labels = np.asarray(labels, dtype=np.uint32)
    if labels.shape != (codes.count,):
        raise ShapeError(f"labels {labels.shape} do not match {codes.count} codes")
    return HammingIndex(codes, labels)


def build_index_from_file(path) -> HammingIndex:
    codes, labels = load_hash_db(path)
    return build_index(codes, labels)


def _as_words(code, bits: int) -> np.ndarray:
    """Accept packed uint64 words or a raw +/-1 code of the right length."""
    arr = np.asarray(code)
    if arr.dtype == np.uint64:
        if arr.shape != (words_per_code(bits),):
            raise ShapeError(f"expected {words_per_code(bits)} packed words, got {arr.shape}")
        return np.ascontiguousarray(arr, dtype="<u8")
    if arr.ndim == 1 and arr.shape[0] == bits:
        return pack_code(arr.astype(np.float64))
    raise ShapeError(f"query code of shape {arr.shape} does not match k={bits}")


def hamming(a: np.ndarray, b: np.ndarray, bits: int) -> int:
    """Exact Hamming distance between two codes of length ``bits``."""
    aw = _as_words(a, bits)
    bw = _as_words(b, bits)
    return int(_kernels.hamming_distances(aw[None, :], bw)[0])


def query_topk(index: HammingIndex, code, topk: int) -> list[tuple[int, int]]:
    """Exact K nearest database ids by Hamming distance.

    Distances are non-decreasing and ties are broken by ascending id, so the
    output is fully deterministic. K beyond the database size returns all.
    """
    if topk < 1:
        raise ShapeError(f"topk must be >= 1, got {topk}")
    if index.count == 0:
        return []
    words = _as_words(code, index.bits)
    dists = _kernels.hamming_distances(index.codes.words, words)
    order = np.argsort(dists, kind="stable")[: min(topk, index.count)]
    return [(int(i), int(dists[i])) for i in order]
