"""Image quality metrics: PSNR, SSIM, deep-feature perceptual distance, FID.

The perceptual distance and FID use a :class:`FeatureExtractor` built on the
phantom-trained classifier, so their absolute values are only meaningful
relative to each other within this package.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import EmptyInputError, NumericError, ShapeError

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
K1, K2, L = 0.01, 0.03, 1.0
WINDOW, SIGMA = 11, 1.5


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, region: np.ndarray | None = None) -> float:
    """10 log10(1 / MSE) in dB over ``region`` (or all pixels); ``inf`` if identical."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    diff2 = (a - b) ** 2
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != a.shape[:2]:
            raise ShapeError(f"region {region.shape} vs image {a.shape[:2]}")
        if not region.any():
            raise EmptyInputError("psnr: empty region")
        diff2 = diff2[region]
    mse = float(np.mean(diff2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(L * L / mse)


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _valid_filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable Gaussian filtering keeping only windows fully inside the image."""
    half = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[half:img.shape[0] - half, half:img.shape[1] - half]


def to_luma(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image @ LUMA if image.ndim == 3 else image


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-window SSIM on luma; entry (i, j) belongs to the window centred at (i+5, j+5)."""
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b)
    ya, yb = to_luma(a), to_luma(b)
    if min(ya.shape) < WINDOW:
        raise ShapeError(f"image {ya.shape} smaller than the {WINDOW}x{WINDOW} SSIM window")
    g = gaussian_window()
    mu_a, mu_b = _valid_filter(ya, g), _valid_filter(yb, g)
    var_a = _valid_filter(ya * ya, g) - mu_a * mu_a
    var_b = _valid_filter(yb * yb, g) - mu_b * mu_b
    cov = _valid_filter(ya * yb, g) - mu_a * mu_b
    c1, c2 = (K1 * L) ** 2, (K2 * L) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))


def ssim(a: np.ndarray, b: np.ndarray, region: np.ndarray | None = None) -> float:
    """Mean windowed SSIM; with ``region``, only windows centred inside it count."""
    smap = ssim_map(a, b)
    if region is None:
        return float(np.mean(smap))
    region = np.asarray(region, dtype=bool)
    half = WINDOW // 2
    centres = region[half:region.shape[0] - half, half:region.shape[1] - half]
    if not centres.any():
        raise EmptyInputError("ssim: no window centre inside the region")
    return float(np.mean(smap[centres]))


@dataclass
class FeatureExtractor:
    """Wraps a trained classifier: pooled penultimate features plus per-block maps."""

    model: object  # evaluator.classification.Classifier
    provenance: str = "unknown"

    @property
    def dim(self) -> int:
        return self.model.feature_dim

    def features(self, images: np.ndarray) -> np.ndarray:
        return self.model.features(np.asarray(images))

    def maps(self, images: np.ndarray) -> list[np.ndarray]:
        return self.model.feature_maps(np.asarray(images))


def perceptual_distance(a: np.ndarray, b: np.ndarray, fx: FeatureExtractor) -> float:
    """Per block: unit-normalize each pixel's channel vector, take the mean
    squared difference over channels and pixels; then average over blocks."""
    _check_pair(np.asarray(a), np.asarray(b))
    maps = fx.maps(np.stack([a, b]))
    total = 0.0
    for m in maps:
        unit = m / (np.sqrt(np.sum(m * m, axis=1, keepdims=True)) + 1e-10)
        total += float(np.mean((unit[0] - unit[1]) ** 2))
    return total / len(maps)


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(c)
    w = np.where(w > 1e-10, w, 0.0)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(mu1, c1, mu2, c2) -> float:
    """||mu1 - mu2||^2 + tr(C1 + C2 - 2 (C1 C2)^(1/2)).

    tr((C1 C2)^(1/2)) is evaluated as the trace of the square root of the
    symmetric matrix sqrt(C1) C2 sqrt(C1), which has the same eigenvalues.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=np.float64)), np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    c1, c2 = np.atleast_2d(np.asarray(c1, dtype=np.float64)), np.atleast_2d(np.asarray(c2, dtype=np.float64))
    if mu1.shape != mu2.shape or c1.shape != c2.shape or c1.shape != (mu1.size, mu1.size):
        raise ShapeError("frechet_distance: dimension mismatch")
    for arr in (mu1, mu2, c1, c2):
        if not np.all(np.isfinite(arr)):
            raise NumericError("frechet_distance: non-finite input")
    c1, c2 = (c1 + c1.T) / 2.0, (c2 + c2.T) / 2.0
    s1 = _psd_sqrt(c1)
    inner = s1 @ c2 @ s1
    eig = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = float(np.sum(np.sqrt(np.clip(eig, 0.0, None))))
    diff = mu1 - mu2
    d = float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * tr_sqrt)
    if -1e-6 <= d < 0.0:
        d = 0.0
    return d


def gaussian_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(features, dtype=np.float64)
    if len(feats) == 0:
        raise EmptyInputError("no features")
    mu = feats.mean(axis=0)
    if len(feats) < 2:
        return mu, np.zeros((feats.shape[1], feats.shape[1]))
    return mu, np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))


def fid_from_features(fa: np.ndarray, fb: np.ndarray) -> float:
    return frechet_distance(*gaussian_stats(fa), *gaussian_stats(fb))


def fid(set_a: np.ndarray, set_b: np.ndarray, fx: FeatureExtractor) -> float:
    if len(set_a) == 0 or len(set_b) == 0:
        raise EmptyInputError("fid: empty image set")
    for s in (set_a, set_b):
        if len(s) < fx.dim + 1:
            warnings.warn(f"FID from {len(s)} images with {fx.dim}-dim features: "
                          "covariance is rank-deficient", RuntimeWarning, stacklevel=2)
    return fid_from_features(fx.features(np.asarray(set_a)), fx.features(np.asarray(set_b)))


def _fmt(x: float):
    return "inf" if math.isinf(x) else x


def metric_report(originals: list[np.ndarray], synthetics: list[np.ndarray], masks: list[np.ndarray],
                  real_reference: np.ndarray, fx: FeatureExtractor) -> dict:
    """Paired metrics (each synthetic vs its source original), averaged over
    pairs, plus FID of the synthetic set against ``real_reference``."""
    if not synthetics:
        raise EmptyInputError("metric_report: no synthetic images")
    p, s, pm, sm, perc = [], [], [], [], []
    for orig, syn, m in zip(originals, synthetics, masks):
        p.append(psnr(orig, syn))
        s.append(ssim(orig, syn))
        pm.append(psnr(orig, syn, m))
        try:
            sm.append(ssim(orig, syn, m))
        except EmptyInputError:
            pass
        perc.append(perceptual_distance(orig, syn, fx))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fid_value = fid(np.stack(synthetics), np.asarray(real_reference), fx)
    return {
        "psnr": _fmt(float(np.mean(p))),
        "ssim": float(np.mean(s)),
        "perc": float(np.mean(perc)),
        "fid": fid_value,
        "psnr_mask": _fmt(float(np.mean(pm))),
        "ssim_mask": float(np.mean(sm)) if sm else None,
        "n_pairs": len(synthetics),
        "extractor": fx.provenance,
    }
