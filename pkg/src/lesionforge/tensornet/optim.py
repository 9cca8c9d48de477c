"""Optimizers.

SGD with classical momentum::

    v <- mu * v + g
    p <- p - lr * v

Adam (bias-corrected)::

    m <- b1 * m + (1 - b1) * g
    s <- b2 * s + (1 - b2) * g**2
    p <- p - lr * (m / (1 - b1**t)) / (sqrt(s / (1 - b2**t)) + eps)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError


@dataclass
class OptimState:
    algorithm: str  # "sgd_momentum" | "adam"
    learning_rate: float
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.algorithm not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")


def sgd_momentum(learning_rate: float = 0.005, momentum: float = 0.95) -> OptimState:
    return OptimState("sgd_momentum", learning_rate, momentum=momentum)


def adam(learning_rate: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999,
         eps: float = 1e-8) -> OptimState:
    return OptimState("adam", learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: OptimState) -> None:
    """Updates ``params`` in place. Refuses the whole step on any non-finite gradient."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step refused")
    state.step += 1
    lr = state.learning_rate
    if state.algorithm == "sgd_momentum":
        for name, p in params.items():
            v = state.velocity.setdefault(name, np.zeros_like(p))
            v *= state.momentum
            v += grads[name]
            p -= lr * v
        return
    b1, b2, t = state.beta1, state.beta2, state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.velocity.setdefault(name, np.zeros_like(p))
        s = state.second.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        s *= b2
        s += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(s / c2) + state.eps)
