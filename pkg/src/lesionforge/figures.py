"""Static side-by-side PNG panels."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import save_image

GAP = 2


def mask_rgb(mask: np.ndarray) -> np.ndarray:
    return np.repeat(np.asarray(mask, dtype=np.float64)[:, :, None], 3, axis=2)


def heat_rgb(heat: np.ndarray) -> np.ndarray:
    """Blue (0) through green to red (1), a small hand-rolled ramp."""
    h = np.clip(heat, 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4 * h - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * h - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * h - 1), 0, 1)
    return np.stack([r, g, b], axis=2)


def overlay(image: np.ndarray, heat: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    return (1 - alpha) * image + alpha * heat_rgb(heat)


def panel(rows: list[list[np.ndarray]], upscale: int = 2) -> np.ndarray:
    """Tiles equally sized HxWx3 tiles on a white background."""
    h, w = rows[0][0].shape[:2]
    ncol = max(len(r) for r in rows)
    out = np.ones((len(rows) * (h + GAP) + GAP, ncol * (w + GAP) + GAP, 3))
    for i, row in enumerate(rows):
        for j, tile in enumerate(row):
            y, x = GAP + i * (h + GAP), GAP + j * (w + GAP)
            out[y:y + h, x:x + w] = tile
    return np.kron(out, np.ones((upscale, upscale, 1)))


def save_panel(path: Path, rows: list[list[np.ndarray]], upscale: int = 2) -> None:
    save_image(path, panel(rows, upscale))
