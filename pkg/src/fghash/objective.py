"""Training objective: code-similarity fitting plus consistency penalties.

Three quadratic terms over relaxed codes, each with a closed-form gradient:

* ``loss_sq``     sum_ij (u_i . v_j - k * s_ij)^2 ties sampled codes to the
                  discrete database codes through the pair labels;
* ``loss_self``   sum |U - U_view|^2 pulls an anchor toward its erased view;
* ``loss_others`` sum |U - U_pos|^2 pulls an anchor toward its positive pair.

The total is loss_sq + alpha * loss_self + beta * loss_others. ``normalize``
divides each term by its own summand count, which keeps gradient magnitudes
independent of the round size and database size; the literal (unnormalized)
sums are the default at this API level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class LossTerms:
    l_sq: float
    l_self: float
    l_others: float
    total: float
    alpha: float
    beta: float


def _check_pair(u: np.ndarray, other: np.ndarray, name: str) -> None:
    if u.shape != other.shape or u.ndim != 2:
        raise ShapeError(f"{name}: expected matching (r,k) arrays, got {u.shape} and {other.shape}")


def loss_sq(u: np.ndarray, v: np.ndarray, s: np.ndarray, bits: int, normalize: bool = False):
    """Pair-similarity term and its gradient with respect to u."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if u.ndim != 2 or v.ndim != 2 or s.ndim != 2:
        raise ShapeError("loss_sq expects 2-d u, v and s")
    if u.shape[1] != v.shape[1] or s.shape != (u.shape[0], v.shape[0]):
        raise ShapeError(
            f"loss_sq shapes disagree: u {u.shape}, v {v.shape}, s {s.shape}"
        )
    if not np.all(np.abs(v) == 1.0):
        raise ShapeError("database codes must be +1/-1")
    resid = u @ v.T - bits * s  # (r, n)
    value = float(np.sum(resid * resid))
    grad = 2.0 * (resid @ v)
    if normalize:
        scale = 1.0 / s.size
        value *= scale
        grad *= scale
    return value, grad


def loss_self(u: np.ndarray, u_view: np.ndarray, normalize: bool = False):
    """Anchor/erased-view consistency term with gradients for both sides."""
    u = np.asarray(u, dtype=np.float64)
    u_view = np.asarray(u_view, dtype=np.float64)
    _check_pair(u, u_view, "loss_self")
    diff = u - u_view
    value = float(np.sum(diff * diff))
    grad = 2.0 * diff
    if normalize:
        scale = 1.0 / u.size
        value *= scale
        grad = grad * scale
    return value, grad, -grad


def loss_others(u: np.ndarray, u_pos: np.ndarray, normalize: bool = False):
    """Anchor/positive-pair consistency term with gradients for both sides."""
    u = np.asarray(u, dtype=np.float64)
    u_pos = np.asarray(u_pos, dtype=np.float64)
    _check_pair(u, u_pos, "loss_others")
    diff = u - u_pos
    value = float(np.sum(diff * diff))
    grad = 2.0 * diff
    if normalize:
        scale = 1.0 / u.size
        value *= scale
        grad = grad * scale
    return value, grad, -grad


def consistency_loss(
    u: np.ndarray, u_view: np.ndarray, u_pos: np.ndarray, alpha: float, beta: float, normalize: bool = False
) -> float:
    """Weighted sum of the two consistency terms."""
    if alpha < 0.0 or beta < 0.0:
        raise ConfigError(f"alpha and beta must be >= 0, got {alpha}, {beta}")
    v_self, _, _ = loss_self(u, u_view, normalize)
    v_others, _, _ = loss_others(u, u_pos, normalize)
    return alpha * v_self + beta * v_others


def loss_total(
    u: np.ndarray,
    u_view: np.ndarray,
    u_pos: np.ndarray,
    v: np.ndarray,
    s: np.ndarray,
    bits: int,
    alpha: float,
    beta: float,
    normalize: bool = False,
):
    """All terms plus gradients w.r.t. u, u_view and u_pos.

    Gradients with respect to the database codes are never taken here; those
    codes are updated by the discrete step in the trainer.
    """
    if alpha < 0.0 or beta < 0.0:
        raise ConfigError(f"alpha and beta must be >= 0, got {alpha}, {beta}")
    v_sq, g_sq = loss_sq(u, v, s, bits, normalize)
    v_self, g_self_u, g_self_view = loss_self(u, u_view, normalize)
    v_others, g_others_u, g_others_pos = loss_others(u, u_pos, normalize)
    total = v_sq + alpha * v_self + beta * v_others
    grad_u = g_sq + alpha * g_self_u + beta * g_others_u
    grad_view = alpha * g_self_view
    grad_pos = beta * g_others_pos
    terms = LossTerms(v_sq, v_self, v_others, total, alpha, beta)
    return terms, grad_u, grad_view, grad_pos
