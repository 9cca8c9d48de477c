"""Epsilon-prediction training with condition dropout and degraded negatives."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import NumericError
from ..tensornet import OptimState, adam, mse_loss, optimizer_step
from .schedule import NoiseSchedule, q_sample
from .unet import Token

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainParams:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 2e-4
    dropout_p: float = 0.1
    degraded_fraction: float = 0.1
    degrade_blur_sigma: float = 1.5
    degrade_noise_sigma: float = 0.05
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    base_width: int = 32
    seed: int = 0


# Values used when continuing from an existing checkpoint, as in the original
# fine-tuning recipe: batch of one, 1,000 steps, learning rate 5e-6.
PAPER_FINETUNE = dict(steps=1000, batch_size=1, learning_rate=5e-6)


def degrade(image: np.ndarray, rng: np.random.Generator, blur_sigma: float = 1.5,
            noise_sigma: float = 0.05) -> np.ndarray:
    """Blurred, noisy copy of an HxWx3 image in [0, 1]."""
    out = gaussian_filter(image, sigma=(blur_sigma, blur_sigma, 0), mode="reflect")
    out = out + rng.normal(0.0, noise_sigma, size=image.shape)
    return np.clip(out, 0.0, 1.0)


def train_step(denoiser, x0: np.ndarray, tokens: np.ndarray, sched: NoiseSchedule,
               opt: OptimState, dropout_p: float, rng: np.random.Generator) -> float:
    """One optimizer step on a batch of model-space images ``x0`` (N,3,H,W).

    Timesteps are drawn uniformly from 1..T and noise from N(0, 1) per item;
    each token is replaced by NULL with probability ``dropout_p``. Raises
    :class:`NumericError` (parameters untouched) if the loss is not finite.
    """
    n = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    drop = rng.random(n) < dropout_p
    tokens = np.where(drop, int(Token.NULL), np.asarray(tokens))
    xt = q_sample(x0, t, eps, sched)
    pred = denoiser.forward(xt, t, tokens)
    diff = pred - eps
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NumericError("diffusion loss is not finite; step skipped")
    _, grad = mse_loss(pred, eps)
    denoiser.zero_grad()
    denoiser.backward(grad)
    optimizer_step(denoiser.parameters(), denoiser.gradients(), opt)
    return loss


def make_batch(images: np.ndarray, idx: np.ndarray, params: TrainParams,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Selects ``images[idx]`` (N,H,W,3 in [0,1]); a ``degraded_fraction`` share
    becomes blurred+noisy copies tagged DEGRADED, the rest are tagged LESION."""
    batch = images[idx].astype(np.float64)
    tokens = np.full(len(idx), int(Token.LESION))
    for i in range(len(idx)):
        if rng.random() < params.degraded_fraction:
            batch[i] = degrade(batch[i], rng, params.degrade_blur_sigma, params.degrade_noise_sigma)
            tokens[i] = int(Token.DEGRADED)
    x0 = (np.moveaxis(batch, -1, 1) * 2.0 - 1.0).astype(np.float32)
    return x0, tokens


def train(denoiser, images: np.ndarray, sched: NoiseSchedule, params: TrainParams,
          opt: OptimState | None = None, log_every: int = 100) -> list[float]:
    """Trains ``denoiser`` in place on lesion images; returns the loss trajectory."""
    if len(images) == 0:
        raise ValueError("no training images")
    rng = np.random.default_rng(params.seed)
    opt = opt or adam(params.learning_rate)
    losses = []
    for step in range(params.steps):
        idx = rng.integers(0, len(images), size=params.batch_size)
        x0, tokens = make_batch(images, idx, params, rng)
        losses.append(train_step(denoiser, x0, tokens, sched, opt, params.dropout_p, rng))
        if log_every and (step + 1) % log_every == 0:
            log.info("diffusion step %d/%d loss %.4f", step + 1, params.steps,
                     float(np.mean(losses[-log_every:])))
    return losses
