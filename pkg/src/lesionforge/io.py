"""On-disk layout: PNG images and masks, YOLO label files, JSON reports.

Every writer is deterministic (sorted JSON keys, fixed PNG encoder settings)
so repeated runs produce byte-identical trees.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MissingInputsError
from .phantom import BBox, Dataset, PhantomConfig, Sample


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path: Path, image: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG", optimize=False)


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_mask(path: Path, mask: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def _default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    """Replaces non-finite floats by strings so the output stays strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(obj), indent=2, sort_keys=True, default=_default, allow_nan=False)
    path.write_text(text + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def require(root: Path, *rel: str) -> None:
    """Raises :class:`MissingInputsError` naming the first missing path under ``root``."""
    for r in rel:
        if not (root / r).exists():
            raise MissingInputsError(f"missing inputs: {r}")


def parse_labels(text: str) -> list[BBox]:
    boxes = []
    for line in text.splitlines():
        if line.strip():
            c, cx, cy, w, h = line.split()
            boxes.append(BBox(float(cx), float(cy), float(w), float(h), int(c)))
    return boxes


def write_dataset(ds: Dataset, root: Path) -> None:
    for s in ds.samples:
        save_image(root / "images" / f"{s.id}.png", s.image)
        (root / "labels").mkdir(parents=True, exist_ok=True)
        (root / "labels" / f"{s.id}.txt").write_text("".join(b.yolo_line() + "\n" for b in s.boxes))
        for j, m in enumerate(s.masks):
            save_mask(root / "masks" / f"{s.id}_{j}.png", m)
    write_json(root / "meta.json", {
        "config": ds.config.to_dict() if ds.config else None,
        "seed": ds.seed,
        "labels": {s.id: s.label for s in ds.samples},
    })


def read_dataset(root: Path) -> Dataset:
    """Reads the layout written by :func:`write_dataset` (images are 8-bit quantized)."""
    if not (root / "meta.json").exists():
        raise MissingInputsError(f"missing inputs: {root.name}/meta.json")
    meta = read_json(root / "meta.json")
    samples = []
    for sid, label in sorted(meta["labels"].items()):
        boxes = parse_labels((root / "labels" / f"{sid}.txt").read_text())
        masks = [load_mask(root / "masks" / f"{sid}_{j}.png") for j in range(len(boxes))]
        samples.append(Sample(sid, load_image(root / "images" / f"{sid}.png"), label, masks, boxes))
    config = PhantomConfig.from_dict(meta["config"]) if meta.get("config") else None
    return Dataset(samples=samples, config=config, seed=meta.get("seed", 0))
