"""Pipeline stages. Each reads only its declared inputs under ``out`` and writes
only under ``out``; ``run_pipeline`` chains them.

Output tree::

    dataset/{images,labels,masks,masks_pred}/  dataset/meta.json
    segment_report.json
    models/denoiser.bin (+ .json)  models/train_log.json  models/extractor.bin (+ .json)
    synth/{id}_v{k}.png  synth/manifest.json
    metrics.json  cv_report.json  det_report.json
    figures/inpaint.png  figures/gradcam.png
    config.resolved.json
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .diffusion import UNet, build_denoiser, inpaint, make_schedule, train
from .errors import ConfigError
from .evaluator.classification import (
    LABELS, cam_containment, grad_cam, run_cv, train_classifier,
)
from .evaluator.detection import run_detection_experiment
from .figures import mask_rgb, overlay, save_panel
from .metrics import FeatureExtractor, metric_report
from .phantom import generate_dataset, split_kfold
from .seeding import derive_seed
from .segmenter import mask_iou, segment_sample
from .tensornet import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

STAGES = ("generate", "segment", "train-diffusion", "synth", "metrics", "eval-cls", "eval-det")
FIGURE_ROWS = 4


def _pool_map(fn, items, workers: int):
    """Ordered map, optionally across processes."""
    if workers <= 1 or len(items) < 2:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*items)))


def echo_config(cfg: RunConfig, out: Path) -> None:
    io.write_json(out / "config.resolved.json", cfg.to_dict())


def _dataset(out: Path):
    io.require(out, "dataset/meta.json")
    return io.read_dataset(out / "dataset")


def _lesions(ds):
    return [s for s in ds.samples if s.label == "lesion"]


def stage_generate(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    io.write_dataset(generate_dataset(cfg.phantom), out / "dataset")


def _segment_one(image, boxes, params):
    return segment_sample(image, boxes, params)


def stage_segment(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    ds = _dataset(out)
    lesions = _lesions(ds)
    results = _pool_map(_segment_one, [(s.image, s.boxes, cfg.segmenter) for s in lesions], workers)
    report, ious = {}, []
    for s, (masks, how) in zip(lesions, results):
        for j, m in enumerate(masks):
            io.save_mask(out / "dataset" / "masks_pred" / f"{s.id}_{j}.png", m)
        per = [mask_iou(m, g) for m, g in zip(masks, s.masks)]
        ious += per
        report[s.id] = {"iou": per, "how": how}
    io.write_json(out / "segment_report.json",
                  {"mean_iou": float(np.mean(ious)) if ious else None, "samples": report})


def stage_train_diffusion(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    ds = _dataset(out)
    p = cfg.diffusion.params
    images = np.stack([s.image for s in _lesions(ds)])
    path = out / "models" / "denoiser.bin"
    done = 0
    if cfg.diffusion.resume:
        io.require(out, "models/denoiser.bin")
        tensors, manifest = load_checkpoint(path)
        net = build_denoiser(manifest["architecture"]).astype(np.float32)
        net.load_parameters(tensors)
        done = int(manifest.get("steps", 0))
    else:
        net = UNet(images.shape[1], np.random.default_rng(p.seed), base=p.base_width).astype(np.float32)
    losses = train(net, images, make_schedule(p.T, p.beta_start, p.beta_end), p)
    manifest = {"architecture": net.describe(), "steps": done + p.steps, "seed": p.seed,
                "train": asdict(p), "resumed_from_step": done}
    save_checkpoint(path, net.parameters(), manifest)
    io.write_json(out / "models" / "train_log.json", {"loss": losses})


def _load_denoiser(out: Path) -> UNet:
    io.require(out, "models/denoiser.bin")
    tensors, manifest = load_checkpoint(out / "models" / "denoiser.bin")
    net = build_denoiser(manifest["architecture"]).astype(np.float32)
    net.load_parameters(tensors)
    return net


def _inpaint_one(image, mask, net, sched, params):
    return inpaint(image, mask, net, sched, params)


def _masks_pred(out: Path, sample) -> np.ndarray:
    union = np.zeros(sample.image.shape[:2], dtype=bool)
    for j in range(len(sample.boxes)):
        union |= io.load_mask(out / "dataset" / "masks_pred" / f"{sample.id}_{j}.png")
    return union


def stage_synth(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    ds = _dataset(out)
    io.require(out, "dataset/masks_pred/")
    net = _load_denoiser(out)
    p = cfg.diffusion.params
    sched = make_schedule(p.T, p.beta_start, p.beta_end)
    if net.image_size != cfg.synth.output_size:
        raise ConfigError(f"synth.output_size {cfg.synth.output_size} != denoiser size {net.image_size}")
    index = {s.id: n for n, s in enumerate(ds.samples)}
    lesions = _lesions(ds)
    jobs, entries = [], []
    for s in lesions:
        params = replace(cfg.synth, seed=derive_seed(cfg.synth.seed, index[s.id]))
        jobs.append((s.image, _masks_pred(out, s), net, sched, params))
        entries.append({
            "id": s.id,
            "masks": [f"dataset/masks_pred/{s.id}_{j}.png" for j in range(len(s.boxes))],
            "seed": params.seed,
            "variant_seeds": [derive_seed(params.seed, v) for v in range(params.variants)],
            "outputs": [f"synth/{s.id}_v{v}.png" for v in range(params.variants)],
            "boxes": "reused from original",
        })
    results = _pool_map(_inpaint_one, jobs, workers)
    for s, variants in zip(lesions, results):
        for v, img in enumerate(variants):
            io.save_image(out / "synth" / f"{s.id}_v{v}.png", img)
    io.write_json(out / "synth" / "manifest.json", {
        "params": {k: v for k, v in asdict(cfg.synth).items() if k != "seed"},
        "denoiser": "models/denoiser.bin",
        "items": entries,
    })
    rows = [[s.image, mask_rgb(job[1])] + list(res)
            for s, job, res in list(zip(lesions, jobs, results))[:FIGURE_ROWS]]
    if rows:
        save_panel(out / "figures" / "inpaint.png", rows)


def _synth_bank(out: Path) -> tuple[dict, dict]:
    io.require(out, "synth/", "synth/manifest.json")
    manifest = io.read_json(out / "synth" / "manifest.json")
    bank = {e["id"]: [io.load_image(out / f) for f in e["outputs"]] for e in manifest["items"]}
    return bank, manifest


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _extractor(cfg: RunConfig, out: Path, ds) -> FeatureExtractor:
    images = np.stack([s.image for s in ds.samples])
    labels = np.array([LABELS[s.label] for s in ds.samples])
    model = train_classifier(images, labels, cfg.metrics.extractor)
    path = out / "models" / "extractor.bin"
    save_checkpoint(path, model.net.parameters(), {"architecture": model.describe(),
                                                     "seed": cfg.metrics.extractor.seed})
    return FeatureExtractor(model, provenance=f"extractor.bin:{_digest(path)}")


def stage_metrics(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    bank, manifest = _synth_bank(out)
    ds = _dataset(out)
    by_id = ds.by_id()
    fx = _extractor(cfg, out, ds)
    originals, synthetics, masks = [], [], []
    for e in manifest["items"]:
        s = by_id[e["id"]]
        m = _masks_pred(out, s)
        for img in bank[e["id"]]:
            originals.append(s.image)
            synthetics.append(img)
            masks.append(m)
    reference = np.stack([s.image for s in _lesions(ds)])
    io.write_json(out / "metrics.json", metric_report(originals, synthetics, masks, reference, fx))


def stage_eval_cls(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    bank, _ = _synth_bank(out)
    ds = _dataset(out)
    base = run_cv(ds, None, cfg.classification, use_synth=False)
    aug = run_cv(ds, bank, cfg.classification, use_synth=True)
    # Grad-CAM on the fold-0 test lesions that the baseline fold-0 model gets right
    _, test_ids = split_kfold(ds.samples, cfg.classification.k, cfg.classification.seed)[0]
    model, by_id = base.models[0], ds.by_id()
    rows, hits, total = [], 0, 0
    for sid in test_ids:
        s = by_id[sid]
        if s.label != "lesion" or model.lesion_scores(s.image[None])[0] < 0.5:
            continue
        heat = grad_cam(model, s.image)
        mask = s.union_mask
        total += 1
        hits += cam_containment(heat, mask) > mask.mean()
        if len(rows) < FIGURE_ROWS:
            rows.append([s.image, overlay(s.image, heat), mask_rgb(mask)])
    if rows:
        save_panel(out / "figures" / "gradcam.png", rows)
    io.write_json(out / "cv_report.json", {
        "original": base.to_dict(), "synthetic": aug.to_dict(),
        "gradcam": {"fold": 0, "correct_lesions": total, "contained": int(hits),
                    "rate": hits / total if total else None},
    })


def stage_eval_det(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    bank, _ = _synth_bank(out)
    ds = _dataset(out)
    reports = run_detection_experiment(ds, bank, cfg.detection)
    io.write_json(out / "det_report.json", {k: v.to_dict() for k, v in reports.items()})


STAGE_FUNCS = {
    "generate": stage_generate,
    "segment": stage_segment,
    "train-diffusion": stage_train_diffusion,
    "synth": stage_synth,
    "metrics": stage_metrics,
    "eval-cls": stage_eval_cls,
    "eval-det": stage_eval_det,
}


def run_stage(name: str, cfg: RunConfig, out: Path, workers: int = 1) -> None:
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    log.info("stage %s -> %s", name, out)
    STAGE_FUNCS[name](cfg, out, workers)


def run_pipeline(cfg: RunConfig, out: Path, workers: int = 1) -> None:
    for name in STAGES:
        run_stage(name, cfg, out, workers)
