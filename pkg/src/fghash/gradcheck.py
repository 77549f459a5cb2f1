"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def finite_difference(
    f: Callable[..., float], arrays: Sequence[np.ndarray], eps: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradients of scalar ``f`` w.r.t. each array.

    Arrays are perturbed in place and restored, so ``f`` may close over them
    or take them as arguments.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_hi = f(*arrays)
            flat[i] = orig - eps
            f_lo = f(*arrays)
            flat[i] = orig
            gf[i] = (f_hi - f_lo) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise |a - n| / max(1, |a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))
