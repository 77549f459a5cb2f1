"""Vectorized numpy implementations of the hot kernels.

This is the fallback backend; ``fghash._kernels._core`` is the compiled
variant with identical signatures. Inputs to the conv kernels are already
padded; padding and bias handling live in the caller.
"""

import numpy as np


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlate x (N,C,H,W) with kernels w (O,C,s,s)."""
    kh, kw = w.shape[2], w.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    y = np.tensordot(win, w, axes=((1, 4, 5), (1, 2, 3)))  # (N, oh, ow, O)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_backward(
    x: np.ndarray,
    w: np.ndarray,
    stride: int,
    gy: np.ndarray,
    need_gx: bool = True,
    need_gw: bool = True,
):
    """Gradients of conv2d_forward w.r.t. the padded input and the kernels."""
    oh, ow = gy.shape[2], gy.shape[3]
    kh, kw = w.shape[2], w.shape[3]
    gx = np.zeros_like(x) if need_gx else None
    gw = np.zeros_like(w) if need_gw else None
    span_h = stride * (oh - 1) + 1
    span_w = stride * (ow - 1) + 1
    for i in range(kh):
        for j in range(kw):
            if need_gw:
                xs = x[:, :, i : i + span_h : stride, j : j + span_w : stride]
                gw[:, :, i, j] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
            if need_gx:
                gx[:, :, i : i + span_h : stride, j : j + span_w : stride] += np.moveaxis(
                    np.tensordot(gy, w[:, :, i, j], axes=([1], [0])), 3, 1
                )
    return gx, gw


def maxpool2_forward(x: np.ndarray):
    """2x2/stride-2 max pooling over (N,C,H,W); odd trailing rows/cols are dropped.

    Returns the pooled array and the within-window argmax (ties keep the
    first position in row-major window order).
    """
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :, : 2 * h2, : 2 * w2]
    win = (
        xc.reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    idx = win.argmax(axis=4).astype(np.int64)
    y = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_backward(idx: np.ndarray, h: int, w: int, gy: np.ndarray) -> np.ndarray:
    """Scatter gy back to the argmax positions of the forward pass."""
    n, c, h2, w2 = gy.shape
    flat = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(flat, idx[..., None], gy[..., None], axis=4)
    gxc = (
        flat.reshape(n, c, h2, w2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, 2 * h2, 2 * w2)
    )
    if (h, w) == (2 * h2, 2 * w2):
        return np.ascontiguousarray(gxc)
    gx = np.zeros((n, c, h, w))
    gx[:, :, : 2 * h2, : 2 * w2] = gxc
    return gx


def hamming_distances(db_words: np.ndarray, q_words: np.ndarray) -> np.ndarray:
    """Hamming distance from one packed code to every row of a packed matrix."""
    return np.bitwise_count(db_words ^ q_words[None, :]).sum(axis=1, dtype=np.int64)
