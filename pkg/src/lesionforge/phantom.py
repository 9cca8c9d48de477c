"""Procedural oral-cavity stand-in images with exact lesion ground truth.

Backgrounds are smooth band-limited colour noise around a pinkish tissue
tone. Lesions are star-shaped blobs (a radius perturbed by a few random
harmonics) filled with a darker, redder and much rougher texture. The blob
support *is* the ground-truth mask.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, StratificationError
from .seeding import derive_seed


@dataclass(frozen=True)
class Palette:
    background: tuple[float, float, float] = (0.85, 0.55, 0.55)
    lesion: tuple[float, float, float] = (0.62, 0.22, 0.28)
    background_jitter: float = 0.04   # per-image uniform shift of the base colour, per channel
    lesion_jitter: float = 0.04
    background_texture: float = 0.03  # std of the smooth background texture
    lesion_texture: float = 0.07      # std of the rough lesion texture


@dataclass(frozen=True)
class PhantomConfig:
    n_normal: int = 29
    n_lesion: int = 127
    image_size: int = 64
    lesion_count_range: tuple[int, int] = (1, 2)
    lesion_radius_range: tuple[float, float] = (0.08, 0.16)
    palette: Palette = field(default_factory=Palette)
    texture_scale: float = 4.0
    min_contrast: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.n_normal < 0 or self.n_lesion < 0:
            raise ConfigError("sample counts must be >= 0")
        if self.image_size < 16:
            raise ConfigError("image_size must be >= 16")
        lo, hi = self.lesion_radius_range
        if not 0.0 < lo <= hi <= 0.5:
            raise ConfigError(f"lesion_radius_range must lie in (0, 0.5], got {self.lesion_radius_range}")
        cmin, cmax = self.lesion_count_range
        if not 1 <= cmin <= cmax:
            raise ConfigError(f"invalid lesion_count_range {self.lesion_count_range}")
        bg, le = np.array(self.palette.background), np.array(self.palette.lesion)
        worst = np.abs(bg - le).mean() - self.palette.background_jitter - self.palette.lesion_jitter
        if worst < self.min_contrast:
            raise ConfigError("palette cannot guarantee the configured min_contrast")
        # A blob of maximal radius (with its harmonic bulge) must fit, and the
        # requested number of them must be able to fit side by side.
        rmax = hi * MAX_BULGE * self.image_size
        if 2 * rmax + 2 > self.image_size or cmax * math.pi * (rmax + 1) ** 2 > 0.6 * self.image_size ** 2:
            raise ConfigError("lesions cannot fit: radius too large for the requested count")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        d = dict(d)
        if "palette" in d and isinstance(d["palette"], dict):
            d["palette"] = Palette(**{k: tuple(v) if isinstance(v, list) else v
                                      for k, v in d["palette"].items()})
        for key in ("lesion_count_range", "lesion_radius_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


MAX_BULGE = 1.3  # 1 + sum of harmonic amplitudes below
HARMONICS = ((2, 0.12), (3, 0.10), (5, 0.08))


@dataclass
class BBox:
    """YOLO-style normalized box."""

    cx: float
    cy: float
    w: float
    h: float
    cls: int = 0

    def to_pixels(self, width: int, height: int) -> tuple[float, float, float, float]:
        """(x, y, w, h) in pixels, top-left anchored."""
        return ((self.cx - self.w / 2) * width, (self.cy - self.h / 2) * height,
                self.w * width, self.h * height)

    def yolo_line(self) -> str:
        return f"{self.cls} {self.cx:.6f} {self.cy:.6f} {self.w:.6f} {self.h:.6f}"


@dataclass
class Sample:
    id: str
    image: np.ndarray          # H x W x 3, float64 in [0, 1]
    label: str                 # "normal" | "lesion"
    masks: list[np.ndarray] = field(default_factory=list)
    boxes: list[BBox] = field(default_factory=list)

    @property
    def union_mask(self) -> np.ndarray:
        out = np.zeros(self.image.shape[:2], dtype=bool)
        for m in self.masks:
            out |= m
        return out


@dataclass
class Dataset:
    samples: list[Sample]
    config: PhantomConfig | None = None
    seed: int = 0

    def __len__(self):
        return len(self.samples)

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def subset(self, ids) -> list[Sample]:
        index = self.by_id()
        return [index[i] for i in ids]


def tight_box(mask: np.ndarray) -> BBox:
    """Normalized bound of the mask's pixels, using pixel edges (max index + 1)."""
    ys, xs = np.nonzero(mask)
    h, w = mask.shape
    x0, x1 = xs.min(), xs.max() + 1
    y0, y1 = ys.min(), ys.max() + 1
    return BBox(cx=(x0 + x1) / 2 / w, cy=(y0 + y1) / 2 / h, w=(x1 - x0) / w, h=(y1 - y0) / h)


def _smooth_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    field_ = gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(sigma, sigma, 0), mode="wrap")
    return field_ / (field_.std() + 1e-12)


def _blob(rng: np.random.Generator, size: int, center: tuple[float, float], radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - center[1], xx - center[0]
    theta = np.arctan2(dy, dx)
    r = np.ones_like(theta)
    for k, amp in HARMONICS:
        r += amp * rng.uniform(0.0, 1.0) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    return np.hypot(dx, dy) <= radius * r


def render_phantom(seed: int, config: PhantomConfig, with_lesion: bool, sample_id: str = "") -> Sample:
    rng = np.random.default_rng(seed)
    size, pal = config.image_size, config.palette
    bg_color = np.array(pal.background) + rng.uniform(-pal.background_jitter, pal.background_jitter, 3)
    image = bg_color + pal.background_texture * _smooth_noise(rng, size, config.texture_scale)
    # gentle vertical shading so backgrounds are not stationary
    image = image * (1.0 - 0.08 * np.linspace(-1, 1, size))[:, None, None]
    masks: list[np.ndarray] = []
    if with_lesion:
        count = int(rng.integers(config.lesion_count_range[0], config.lesion_count_range[1] + 1))
        occupied = np.zeros((size, size), dtype=bool)
        for _ in range(count):
            masks.append(_place_lesion(rng, config, occupied))
            occupied |= masks[-1]
        for m in masks:
            color = np.array(pal.lesion) + rng.uniform(-pal.lesion_jitter, pal.lesion_jitter, 3)
            rough = gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(0.6, 0.6, 0))
            rough /= rough.std() + 1e-12
            image[m] = color + pal.lesion_texture * rough[m]
    image = np.clip(image, 0.0, 1.0)
    background = ~_dilate(np.logical_or.reduce(masks)) if masks else None
    for m in masks:
        contrast = np.abs(image[m].mean(axis=0) - image[background].mean(axis=0)).mean()
        if contrast < config.min_contrast:
            raise ConfigError(f"lesion contrast {contrast:.3f} below min_contrast {config.min_contrast}")
    return Sample(id=sample_id, image=image, label="lesion" if with_lesion else "normal",
                  masks=masks, boxes=[tight_box(m) for m in masks])


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _place_lesion(rng: np.random.Generator, config: PhantomConfig, occupied: np.ndarray,
                  attempts: int = 200) -> np.ndarray:
    size = config.image_size
    lo, hi = config.lesion_radius_range
    for _ in range(attempts):
        radius = rng.uniform(lo, hi) * size
        margin = radius * MAX_BULGE + 1
        cx, cy = rng.uniform(margin, size - margin, 2)
        blob = _blob(rng, size, (cx, cy), radius)
        if blob.any() and not (_dilate(_dilate(blob)) & occupied).any():
            return blob
    raise ConfigError("lesions cannot fit: placement failed, radius too large for requested count")


def generate_dataset(config: PhantomConfig) -> Dataset:
    """``n_normal`` normal samples (ids s00000...) followed by ``n_lesion`` lesion samples.

    Sample ``i`` is rendered from ``derive_seed(config.seed, i)``.
    """
    samples = []
    total = config.n_normal + config.n_lesion
    for i in range(total):
        samples.append(render_phantom(derive_seed(config.seed, i), config,
                                      with_lesion=i >= config.n_normal, sample_id=f"s{i:05d}"))
    return Dataset(samples=samples, config=config, seed=config.seed)


def split_kfold(samples: list[Sample], k: int, seed: int) -> list[tuple[list[str], list[str]]]:
    """Stratified k-fold split; returns ``(train_ids, test_ids)`` per fold.

    Each class is shuffled and dealt round-robin onto the folds, continuing
    where the previous class stopped so fold sizes stay within one of each
    other as well.
    """
    if k < 2:
        raise StratificationError("k must be >= 2")
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[str]] = {}
    for s in samples:
        by_label.setdefault(s.label, []).append(s.id)
    folds: list[list[str]] = [[] for _ in range(k)]
    offset = 0
    for label in sorted(by_label):
        ids = by_label[label]
        if len(ids) < k:
            raise StratificationError(f"class {label!r} has {len(ids)} members, fewer than k={k}")
        for j, i in enumerate(rng.permutation(len(ids))):
            folds[(offset + j) % k].append(ids[i])
        offset = (offset + len(ids)) % k
    order = {s.id: n for n, s in enumerate(samples)}
    out = []
    for f in range(k):
        test = sorted(folds[f], key=order.__getitem__)
        test_set = set(test)
        train = [s.id for s in samples if s.id not in test_set]
        out.append((train, test))
    return out
