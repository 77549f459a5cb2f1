"""Attention-guided region erasing augmentation.

Pipeline: channel-mean the feature map, upsample it to image size, normalize
into (eps, 1+eps], stamp zeros over the l x l blocks anchored at the n_e
hottest positions (padding on the right/bottom so blocks never wrap), and
multiply the raw image by the resulting binary mask. The mask is plain data
augmentation: no gradient flows through its construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import FeatureMap
from .errors import ShapeError
from .ops import bilinear_resize_array
from .tensor import Tensor


@dataclass
class AttentionMask:
    """Normalized attention values in (eps, 1+eps] (all-eps when the input is flat)."""

    values: np.ndarray  # (h, w)
    epsilon: float


@dataclass
class BinaryMask:
    values: np.ndarray  # (h, w), entries exactly 0.0 or 1.0
    anchors: list[tuple[int, int]]


def _feature_array(a) -> np.ndarray:
    if isinstance(a, FeatureMap):
        a = a.a
    if isinstance(a, Tensor):
        a = a.data
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"feature map must be (C,H,W), got {arr.shape}")
    return arr


def channel_mean(a) -> np.ndarray:
    """Mean over the channel axis of a (C,H,W) feature map."""
    return _feature_array(a).mean(axis=0)


def normalize_mask(a: np.ndarray, epsilon: float) -> AttentionMask:
    """Min-max normalize into (eps, 1+eps]; a constant input maps to all eps."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"attention map must be 2-d, got {a.shape}")
    lo, hi = a.min(), a.max()
    if hi == lo:
        return AttentionMask(np.full_like(a, epsilon), epsilon)
    return AttentionMask((a - lo) / (hi - lo) + epsilon, epsilon)


def select_erase(mask: AttentionMask | np.ndarray, num_erasers: int, eraser_size: int) -> BinaryMask:
    """Zero the eraser_size x eraser_size block anchored at each of the
    num_erasers hottest positions (ties broken in row-major order).

    The mask is conceptually padded by eraser_size on the right and bottom,
    blocks are stamped in padded coordinates, and the result is cropped back,
    so blocks near the edge are clipped rather than wrapped.
    """
    values = mask.values if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"mask must be 2-d, got {values.shape}")
    h, w = values.shape
    if not 1 <= eraser_size <= min(h, w):
        raise ShapeError(f"eraser_size must be in [1, {min(h, w)}], got {eraser_size}")
    if not 1 <= num_erasers <= h * w:
        raise ShapeError(f"num_erasers must be in [1, {h * w}], got {num_erasers}")

    order = np.argsort(-values.ravel(), kind="stable")[:num_erasers]
    padded = np.ones((h + eraser_size, w + eraser_size))
    anchors = []
    for pos in order:
        r, c = divmod(int(pos), w)
        padded[r : r + eraser_size, c : c + eraser_size] = 0.0
        anchors.append((r, c))
    return BinaryMask(np.ascontiguousarray(padded[:h, :w]), anchors)


def apply_mask(x: np.ndarray, mask: BinaryMask | np.ndarray) -> np.ndarray:
    """Multiply each channel of a (C,H,W) image by the binary mask."""
    x = np.asarray(x, dtype=np.float64)
    values = mask.values if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=np.float64)
    if x.ndim != 3 or values.ndim != 2 or x.shape[1:] != values.shape:
        raise ShapeError(f"image {x.shape} and mask {values.shape} do not align")
    return x * values[None, :, :]


def erase_mask(
    feature_map,
    out_h: int,
    out_w: int,
    num_erasers: int,
    eraser_size: int,
    epsilon: float,
) -> BinaryMask:
    """Binary erase mask at image resolution for one feature map.

    A flat attention map gives no ranking signal; erasing then anchors at
    row-major-first positions, except when the blocks would tile the whole
    image (num_erasers * eraser_size^2 >= h * w), where erasing is skipped to
    avoid blanking the input.
    """
    if num_erasers < 1:
        raise ShapeError(f"num_erasers must be >= 1, got {num_erasers}")
    resized = bilinear_resize_array(channel_mean(feature_map), out_h, out_w)
    mask = normalize_mask(resized, epsilon)
    flat = resized.max() == resized.min()
    if flat and num_erasers * eraser_size * eraser_size >= out_h * out_w:
        return BinaryMask(np.ones((out_h, out_w)), [])
    return select_erase(mask, num_erasers, eraser_size)


def make_erased(
    x: np.ndarray,
    feature_map,
    num_erasers: int,
    eraser_size: int,
    epsilon: float,
    return_mask: bool = False,
):
    """Erased view of an image, driven by its own feature map."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"image must be (C,H,W), got {x.shape}")
    mask = erase_mask(feature_map, x.shape[1], x.shape[2], num_erasers, eraser_size, epsilon)
    erased = apply_mask(x, mask)
    if return_mask:
        return erased, mask
    return erased


def write_mask_pgm(path, mask: BinaryMask) -> None:
    """Dump a binary mask as an 8-bit PGM (P5) image."""
    values = (mask.values * 255.0).astype(np.uint8)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(values.tobytes())
