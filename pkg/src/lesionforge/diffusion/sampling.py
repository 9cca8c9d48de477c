"""Ancestral sampling with classifier-free guidance, and RePaint-style inpainting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError
from ..seeding import derive_seed
from .schedule import NoiseSchedule, q_sample, to_image_space, to_model_space
from .unet import Token


class EmptyMaskWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SynthParams:
    guidance_scale: float = 7.5
    inference_steps: int = 100
    variants: int = 3
    output_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.guidance_scale < 0:
            raise ConfigError("guidance_scale must be >= 0")
        if self.inference_steps < 1:
            raise ConfigError("inference_steps must be >= 1")
        if self.variants < 1:
            raise ConfigError("variants must be >= 1")


def inference_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced, strictly decreasing subsequence of 1..T with ``steps`` entries."""
    if not 1 <= steps <= T:
        raise ConfigError(f"inference_steps must lie in 1..{T}, got {steps}")
    if steps == 1:
        return np.array([T])
    ts = np.unique(np.round(np.linspace(1, T, steps)).astype(np.int64))
    return ts[::-1]


def cfg_epsilon(denoiser, x_t: np.ndarray, t, positive, negative=None, g: float = 7.5) -> np.ndarray:
    """Guided noise estimate ``eps_neg + g * (eps_pos - eps_neg)``.

    NULL stands in for a missing negative. The g = 0, g = 1 and
    positive == negative cases return the single relevant prediction
    directly, so they hold bit-exactly.
    """
    neg = Token.NULL if negative is None else negative
    n = x_t.shape[0]
    t = np.broadcast_to(np.asarray(t), (n,))
    pos_tok = np.broadcast_to(np.asarray(positive, dtype=np.int64), (n,))
    neg_tok = np.broadcast_to(np.asarray(neg, dtype=np.int64), (n,))
    if g == 1.0 or np.array_equal(pos_tok, neg_tok):
        return denoiser.forward(x_t, t, pos_tok)
    if g == 0.0:
        return denoiser.forward(x_t, t, neg_tok)
    both = denoiser.forward(np.concatenate([x_t, x_t]), np.concatenate([t, t]),
                            np.concatenate([pos_tok, neg_tok]))
    e_pos, e_neg = both[:n], both[n:]
    return e_neg + g * (e_pos - e_neg)


def reverse_step(x_t: np.ndarray, eps: np.ndarray, t: int, s: int, sched: NoiseSchedule,
                 noise: np.ndarray | None) -> np.ndarray:
    """One ancestral step t -> s (s < t, s = 0 ends the chain).

    The clean estimate from ``eps`` is clipped to [-1, 1] before forming the
    posterior mean; the variance is the posterior ``beta_tilde``.
    """
    ab_t, ab_s = float(sched.abar(t)), float(sched.abar(s))
    alpha = ab_t / ab_s
    beta = 1.0 - alpha
    x0_hat = np.clip((x_t - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t), -1.0, 1.0)
    mean = (np.sqrt(ab_s) * beta / (1.0 - ab_t)) * x0_hat \
        + (np.sqrt(alpha) * (1.0 - ab_s) / (1.0 - ab_t)) * x_t
    if s == 0 or noise is None:
        return mean.astype(x_t.dtype, copy=False)
    var = beta * (1.0 - ab_s) / (1.0 - ab_t)
    return (mean + np.sqrt(var) * noise).astype(x_t.dtype, copy=False)


def _draw(rngs: list[np.random.Generator], shape) -> np.ndarray:
    return np.stack([r.standard_normal(shape) for r in rngs]).astype(np.float32)


def reverse_process(denoiser, sched: NoiseSchedule, params: SynthParams, rngs, positive,
                    negative=None, known: np.ndarray | None = None,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Runs the guided reverse chain for ``len(rngs)`` items; returns model-space x0.

    With ``known`` (N,3,H,W) and ``mask`` (N,1,H,W, True = regenerate), the
    known region is re-noised to the current timestep and pasted in before
    every step.
    """
    shape = (denoiser.channels, denoiser.image_size, denoiser.image_size)
    x = _draw(rngs, shape)
    ts = inference_timesteps(sched.T, params.inference_steps)
    for i, t in enumerate(ts):
        s = int(ts[i + 1]) if i + 1 < len(ts) else 0
        if known is not None:
            x = np.where(mask, x, q_sample(known, int(t), _draw(rngs, shape), sched))
        eps = cfg_epsilon(denoiser, x, int(t), positive, negative, params.guidance_scale)
        x = reverse_step(x, eps, int(t), s, sched, _draw(rngs, shape) if s else None)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite sample at timestep {t}")
    return x


def sample(denoiser, sched: NoiseSchedule, params: SynthParams, positive=Token.LESION,
           negative=Token.DEGRADED, n: int | None = None) -> np.ndarray:
    """Generates one HxWx3 image in [0, 1] (or ``n`` of them stacked)."""
    count = 1 if n is None else n
    rngs = [np.random.default_rng(derive_seed(params.seed, i)) for i in range(count)]
    x = reverse_process(denoiser, sched, params, rngs, positive, negative)
    images = to_image_space(x.astype(np.float64))
    return images[0] if n is None else images


def inpaint(image: np.ndarray, mask: np.ndarray, denoiser, sched: NoiseSchedule,
            params: SynthParams, positive=Token.LESION, negative=Token.DEGRADED) -> list[np.ndarray]:
    """Regenerates the masked region of ``image``; returns ``params.variants`` images.

    Pixels outside ``mask`` are copied from the input unchanged. Variant k uses
    the seed ``derive_seed(params.seed, k)``.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise ShapeError(f"mask {mask.shape} vs image {image.shape[:2]}")
    if not mask.any():
        warnings.warn("empty inpainting mask; returning the input unchanged", EmptyMaskWarning,
                      stacklevel=2)
        return [image.copy() for _ in range(params.variants)]
    k = params.variants
    rngs = [np.random.default_rng(derive_seed(params.seed, v)) for v in range(k)]
    known = np.repeat(to_model_space(image)[None].astype(np.float32), k, axis=0)
    m = np.broadcast_to(mask[None, None], (k, 1) + mask.shape)
    x = reverse_process(denoiser, sched, params, rngs, positive, negative, known=known, mask=m)
    generated = to_image_space(x.astype(np.float64))
    return [np.where(mask[:, :, None], generated[v], image) for v in range(k)]
