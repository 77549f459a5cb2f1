"""Dense float64 tensors with a minimal reverse-mode gradient tape.

The tape covers exactly the fixed set of operations in :mod:`fghash.ops`.
Tensors wrap contiguous numpy arrays; gradients accumulate in place, so the
backward pass of a sum of losses equals the sum of the individual backward
passes.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-d float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Propagate gradients to every tensor this one was computed from.

        ``seed`` is the upstream gradient; it defaults to 1 for scalars and
        is required otherwise.
        """
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require gradients")
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar tensor requires a seed gradient")
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = np.ascontiguousarray(seed, dtype=np.float64)
            if seed_arr.shape != self.data.shape:
                raise ShapeError(f"seed shape {seed_arr.shape} != tensor shape {self.data.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.accumulate_grad(seed_arr)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def apply_op(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result, recording the tape edge when gradients are wanted.

    ``backward`` receives the upstream gradient and accumulates into the
    parents; it is dropped entirely when no parent tracks gradients or
    recording is disabled.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out
