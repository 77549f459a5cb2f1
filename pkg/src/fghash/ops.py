"""The fixed operation set: forward semantics plus hand-derived backward passes.

Convolution is cross-correlation (no kernel flip). Spatial ops accept a
single image (C,H,W) or a batch (N,C,H,W); a batch axis is added and removed
transparently. All math is float64.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ShapeError
from .tensor import Tensor, apply_op


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g @ bd.T)
        if b.requires_grad:
            b.accumulate_grad(ad.T @ g)

    return apply_op(ad @ bd, (a, b), backward)


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Affine map y = x @ w.T + bias for x (N,C), w (K,C), bias (K,)."""
    if x.ndim != 2 or w.ndim != 2 or bias.ndim != 1:
        raise ShapeError("linear expects x (N,C), w (K,C), bias (K,)")
    if x.shape[1] != w.shape[1] or bias.shape[0] != w.shape[0]:
        raise ShapeError(f"linear shapes disagree: x {x.shape}, w {w.shape}, bias {bias.shape}")
    xd, wd = x.data, w.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g @ wd)
        if w.requires_grad:
            w.accumulate_grad(g.T @ xd)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return apply_op(xd @ wd.T + bias.data, (x, w, bias), backward)


def _as_batch(t: Tensor) -> tuple[np.ndarray, bool]:
    if t.ndim == 3:
        return t.data[None], True
    if t.ndim == 4:
        return t.data, False
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got {t.shape}")


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """Strided cross-correlation with optional zero padding and per-channel bias."""
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid stride/pad: {stride}/{pad}")
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be (O,C,s,s), got {kernels.shape}")
    xd, squeeze = _as_batch(x)
    o, c_k, kh, kw = kernels.shape
    n, c, h, w = xd.shape
    if c != c_k:
        raise ShapeError(f"input has {c} channels but kernels expect {c_k}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if kh > h + 2 * pad or kw > w + 2 * pad or oh < 1 or ow < 1:
        raise ShapeError(
            f"kernel {kh}x{kw} with stride {stride}, pad {pad} yields empty output on {h}x{w}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias must have shape ({o},), got {bias.shape}")

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    y = _kernels.conv2d_forward(xp, kernels.data, stride)
    if bias is not None:
        y = y + bias.data.reshape(1, -1, 1, 1)

    kd = kernels.data

    def backward(g: np.ndarray) -> None:
        g4 = g[None] if squeeze else g
        gxp, gw = _kernels.conv2d_backward(
            xp, kd, stride, np.ascontiguousarray(g4), x.requires_grad, kernels.requires_grad
        )
        if x.requires_grad:
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
            x.accumulate_grad(gx[0] if squeeze else gx)
        if kernels.requires_grad:
            kernels.accumulate_grad(gw)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g4.sum(axis=(0, 2, 3)))

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return apply_op(y[0] if squeeze else y, parents, backward)


def shift(x: Tensor, offset: float) -> Tensor:
    """Add a constant to every element (gradient passes through unchanged)."""

    def backward(g: np.ndarray) -> None:
        x.accumulate_grad(g)

    return apply_op(x.data + offset, (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old_shape = x.shape

    def backward(g: np.ndarray) -> None:
        x.accumulate_grad(np.ascontiguousarray(g.reshape(old_shape)))

    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old_shape} to {shape}") from exc
    return apply_op(data, (x,), backward)


def relu_act(x: Tensor) -> Tensor:
    xd = x.data

    def backward(g: np.ndarray) -> None:
        x.accumulate_grad(g * (xd > 0.0))

    return apply_op(np.maximum(xd, 0.0), (x,), backward)


def tanh_act(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g: np.ndarray) -> None:
        x.accumulate_grad(g * (1.0 - y * y))

    return apply_op(y, (x,), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; trailing odd rows/columns are dropped."""
    xd, squeeze = _as_batch(x)
    n, c, h, w = xd.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2 needs spatial dims >= 2, got {h}x{w}")
    y, idx = _kernels.maxpool2_forward(xd)

    def backward(g: np.ndarray) -> None:
        g4 = g[None] if squeeze else g
        gx = _kernels.maxpool2_backward(idx, h, w, np.ascontiguousarray(g4))
        x.accumulate_grad(gx[0] if squeeze else gx)

    return apply_op(y[0] if squeeze else y, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (C,H,W) -> (C,) or (N,C,H,W) -> (N,C)."""
    xd, squeeze = _as_batch(x)
    n, c, h, w = xd.shape
    y = xd.mean(axis=(2, 3))
    scale = 1.0 / (h * w)

    def backward(g: np.ndarray) -> None:
        g4 = g[None] if squeeze else g
        gx = np.broadcast_to((g4 * scale)[:, :, None, None], xd.shape).copy()
        x.accumulate_grad(gx[0] if squeeze else gx)

    return apply_op(y[0] if squeeze else y, (x,), backward)


def _resize_axis(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align-corners source coordinates for one axis: (lo, hi, frac)."""
    if src == 1:
        z = np.zeros(dst, dtype=np.int64)
        return z, z, np.zeros(dst)
    if dst == 1:
        coords = np.zeros(1)
    else:
        coords = np.arange(dst) * ((src - 1) / (dst - 1))
    lo = np.minimum(np.floor(coords).astype(np.int64), src - 2)
    frac = coords - lo
    return lo, lo + 1, frac


def bilinear_resize_array(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear interpolation of a 2-d array.

    Resizing to the source size reproduces the input exactly.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"bilinear resize expects a 2-d array, got {a.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target dims must be >= 1, got {out_h}x{out_w}")
    ylo, yhi, fy = _resize_axis(a.shape[0], out_h)
    xlo, xhi, fx = _resize_axis(a.shape[1], out_w)
    wy0, wy1 = (1.0 - fy)[:, None], fy[:, None]
    wx0, wx1 = (1.0 - fx)[None, :], fx[None, :]
    return (
        a[np.ix_(ylo, xlo)] * wy0 * wx0
        + a[np.ix_(ylo, xhi)] * wy0 * wx1
        + a[np.ix_(yhi, xlo)] * wy1 * wx0
        + a[np.ix_(yhi, xhi)] * wy1 * wx1
    )


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Tensor wrapper of :func:`bilinear_resize_array` with a backward pass."""
    if x.ndim != 2:
        raise ShapeError(f"bilinear_resize expects a 2-d tensor, got {x.shape}")
    h, w = x.shape
    y = bilinear_resize_array(x.data, out_h, out_w)
    ylo, yhi, fy = _resize_axis(h, out_h)
    xlo, xhi, fx = _resize_axis(w, out_w)
    wy0, wy1 = (1.0 - fy)[:, None], fy[:, None]
    wx0, wx1 = (1.0 - fx)[None, :], fx[None, :]

    def backward(g: np.ndarray) -> None:
        gx = np.zeros((h, w))
        yy0 = np.broadcast_to(ylo[:, None], g.shape)
        yy1 = np.broadcast_to(yhi[:, None], g.shape)
        xx0 = np.broadcast_to(xlo[None, :], g.shape)
        xx1 = np.broadcast_to(xhi[None, :], g.shape)
        np.add.at(gx, (yy0, xx0), g * wy0 * wx0)
        np.add.at(gx, (yy0, xx1), g * wy0 * wx1)
        np.add.at(gx, (yy1, xx0), g * wy1 * wx0)
        np.add.at(gx, (yy1, xx1), g * wy1 * wx1)
        x.accumulate_grad(gx)

    return apply_op(y, (x,), backward)
