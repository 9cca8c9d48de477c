"""Linear-beta DDPM noise schedule and the forward (noising) process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep ``beta``, ``alpha`` and ``alpha_bar``.

    Arrays are stored 0-based: entry ``t - 1`` belongs to timestep ``t``
    (timesteps run ``1..T``). Use :meth:`abar` for 1-based access where
    ``abar(0) == 1``.
    """

    betas: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def abar(self, t) -> np.ndarray:
        t = np.asarray(t)
        return np.where(t == 0, 1.0, self.alpha_bars[np.maximum(t, 1) - 1])


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 2 or not 0.0 < beta_start < beta_end < 1.0:
        raise ConfigError(f"invalid schedule T={T}, beta=[{beta_start}, {beta_end}]")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``x0`` is in model space ([-1, 1]); ``t`` is a scalar or one timestep per
    batch item.
    """
    if eps.shape != x0.shape:
        raise ShapeError(f"eps {eps.shape} vs x0 {x0.shape}")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise ConfigError(f"timestep out of range 1..{sched.T}")
    ab = sched.abar(t)
    if ab.ndim:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(x0.dtype, copy=False)


def to_model_space(image: np.ndarray) -> np.ndarray:
    """HxWx3 image in [0, 1] -> 3xHxW array in [-1, 1] (batched inputs also accepted)."""
    arr = np.asarray(image)
    arr = np.moveaxis(arr, -1, -3)
    return arr * 2.0 - 1.0


def to_image_space(x: np.ndarray) -> np.ndarray:
    arr = (np.clip(x, -1.0, 1.0) + 1.0) / 2.0
    return np.moveaxis(arr, -3, -1)
