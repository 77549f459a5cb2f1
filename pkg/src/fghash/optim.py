"""SGD with momentum and coupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class SgdState:
    """Optimizer state: one velocity buffer per parameter tensor."""

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocities: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.momentum < 0.0 or self.weight_decay < 0.0:
            raise ConfigError("momentum and weight_decay must be >= 0")

    @classmethod
    def for_params(
        cls, params: list[Tensor], learning_rate: float, momentum: float = 0.0, weight_decay: float = 0.0
    ) -> "SgdState":
        state = cls(learning_rate, momentum, weight_decay)
        state.velocities = [np.zeros_like(p.data) for p in params]
        return state


def sgd_step(params: list[Tensor], grads: list[np.ndarray], state: SgdState) -> None:
    """One update: v <- mu*v + (g + lambda*p); p <- p - eta*v (in place)."""
    if len(params) != len(grads) or len(params) != len(state.velocities):
        raise ShapeError("params, grads and velocities must have matching lengths")
    for p, g, v in zip(params, grads, state.velocities):
        if g.shape != p.data.shape or v.shape != p.data.shape:
            raise ShapeError(f"gradient/velocity shape mismatch for parameter {p.shape}")
        v *= state.momentum
        v += g
        if state.weight_decay:
            v += state.weight_decay * p.data
        p.data -= state.learning_rate * v
