"""Point-prompt lesion masks: box centre -> seeded region growing -> cleanup."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptyInputError, RegionOverflowError, ShapeError
from .phantom import BBox

NEIGHBORS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
NEIGHBORS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


@dataclass(frozen=True)
class PixelPoint:
    x: int
    y: int


@dataclass(frozen=True)
class GrowParams:
    color_tolerance: float = 0.12
    connectivity: int = 8
    max_region_fraction: float = 0.5
    smoothing_radius: int = 1

    def __post_init__(self):
        if self.color_tolerance <= 0:
            raise ConfigError("color_tolerance must be > 0")
        if not 0.0 < self.max_region_fraction <= 1.0:
            raise ConfigError("max_region_fraction must lie in (0, 1]")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")


def bbox_center(box: BBox, width: int, height: int) -> PixelPoint:
    x = min(max(math.floor(box.cx * width), 0), width - 1)
    y = min(max(math.floor(box.cy * height), 0), height - 1)
    return PixelPoint(x, y)


def grow_region(image: np.ndarray, seed: PixelPoint, params: GrowParams = GrowParams()) -> np.ndarray:
    """Breadth-first region growing from ``seed`` on the box-blurred image.

    A neighbour joins when its RGB distance to the running mean colour of the
    region is within ``color_tolerance``. Neighbours are visited in row-major
    offset order from a FIFO queue, so the result is deterministic.
    """
    h, w = image.shape[:2]
    if not (0 <= seed.x < w and 0 <= seed.y < h):
        raise ShapeError(f"seed {seed} outside {w}x{h} image")
    r = params.smoothing_radius
    img = ndimage.uniform_filter(image, size=(2 * r + 1, 2 * r + 1, 1), mode="nearest") if r else image
    img = np.asarray(img, dtype=np.float64)
    offsets = NEIGHBORS_8 if params.connectivity == 8 else NEIGHBORS_4
    limit = params.max_region_fraction * h * w
    tol2 = params.color_tolerance ** 2

    mask = np.zeros((h, w), dtype=bool)
    visited = np.zeros((h, w), dtype=bool)
    mask[seed.y, seed.x] = visited[seed.y, seed.x] = True
    total = img[seed.y, seed.x].copy()
    count = 1
    queue = deque([(seed.y, seed.x)])
    while queue:
        y, x = queue.popleft()
        for dy, dx in offsets:
            ny, nx = y + dy, x + dx
            if ny < 0 or ny >= h or nx < 0 or nx >= w or visited[ny, nx]:
                continue
            diff = img[ny, nx] - total / count
            if diff @ diff <= tol2:
                visited[ny, nx] = mask[ny, nx] = True
                total += img[ny, nx]
                count += 1
                if count > limit:
                    raise RegionOverflowError(
                        f"region exceeded {params.max_region_fraction:.2f} of the image", mask.copy())
                queue.append((ny, nx))
    return mask


def refine_mask(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected component with enclosed holes filled."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyInputError("refine_mask: empty mask")
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n > 1:
        sizes = np.bincount(labels.ravel())[1:]
        mask = labels == (int(np.argmax(sizes)) + 1)
    return ndimage.binary_fill_holes(mask)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"mask_iou: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def segment_sample(image: np.ndarray, boxes: list[BBox], params: GrowParams = GrowParams()
                   ) -> tuple[list[np.ndarray], list[str]]:
    """One refined mask per box. On overflow the filled box is used instead;
    the second list records ``"grown"`` or ``"box-fallback"`` per mask."""
    h, w = image.shape[:2]
    masks, how = [], []
    for box in boxes:
        seed = bbox_center(box, w, h)
        try:
            masks.append(refine_mask(grow_region(image, seed, params)))
            how.append("grown")
        except RegionOverflowError:
            x, y, bw, bh = box.to_pixels(w, h)
            m = np.zeros((h, w), dtype=bool)
            m[int(round(y)):int(round(y + bh)), int(round(x)):int(round(x + bw))] = True
            masks.append(m)
            how.append("box-fallback")
    return masks, how
