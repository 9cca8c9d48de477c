"""Sliding-patch lesion detector and COCO-style detection metrics.

Boxes are ``(x, y, w, h)`` in pixels, top-left anchored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import softmax

from ..errors import ConfigError, UndefinedMetricError, UsageError
from ..phantom import BBox, Dataset, Sample, split_kfold
from ..tensornet import (
    Conv2d, Dense, Flatten, ReLU, Sequential, cross_entropy_loss, optimizer_step, sgd_momentum,
)
from .classification import synthetic_training_items

log = logging.getLogger(__name__)

Box = tuple[float, float, float, float]
IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_LEVELS = 101  # recall 0.00, 0.01, ..., 1.00


@dataclass(frozen=True)
class DetConfig:
    patch: int = 8
    epochs: int = 120
    batch_size: int = 4
    learning_rate: float = 0.005
    momentum: float = 0.95
    positives_per_image: int = 4
    negatives_per_image: int = 4
    threshold: float = 0.5
    nms_iou: float = 0.5
    oversample_factor: int = 4
    k: int = 5
    holdout_fold: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.patch < 4 or self.patch % 4:
            raise ConfigError("patch must be a multiple of 4 and >= 4")


@dataclass(frozen=True)
class Detection:
    box: Box
    confidence: float


@dataclass
class DetReport:
    precision: float
    recall: float
    map50: float
    map50_95: float
    n_images: int = 0
    n_gt: int = 0
    n_pred: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def box_iou(a: Box, b: Box) -> float:
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    iw = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    ih = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def nms(dets: list[Detection], iou_thr: float = 0.5) -> list[Detection]:
    """Greedy non-maximum suppression, highest confidence first."""
    keep: list[Detection] = []
    for d in sorted(dets, key=lambda d: -d.confidence):
        if all(box_iou(d.box, k.box) < iou_thr for k in keep):
            keep.append(d)
    return keep


def boxes_from_probability_map(prob: np.ndarray, threshold: float = 0.5,
                               nms_iou: float = 0.5) -> list[Detection]:
    """8-connected components of ``prob >= threshold``; confidence is the
    component's mean probability."""
    labels, n = ndimage.label(prob >= threshold, structure=np.ones((3, 3), dtype=bool))
    dets = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        conf = float(prob[labels == i].mean())
        dets.append(Detection((float(xs.start), float(ys.start), float(xs.stop - xs.start),
                               float(ys.stop - ys.start)), conf))
    return nms(dets, nms_iou)


def match_detections(preds: list[Detection], gts: list[Box], iou_thr: float) -> tuple[list[bool], int]:
    """Greedy matching in the given (confidence-descending) order.

    Returns one TP flag per prediction and the number of unmatched GT boxes.
    """
    matched = [False] * len(gts)
    flags = []
    for p in preds:
        best, best_iou = -1, iou_thr
        for j, g in enumerate(gts):
            if matched[j]:
                continue
            iou = box_iou(p.box, g)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = j, iou
        if best >= 0:
            matched[best] = True
        flags.append(best >= 0)
    return flags, matched.count(False)


def average_precision(flags, confidences, total_gt: int) -> float:
    """COCO 101-point interpolated AP.

    Predictions are ranked by confidence (stable for ties); the precision
    envelope is sampled at recall 0.00, 0.01, ..., 1.00, counting 0 where
    the recall level is never reached. "Reached" is decided in integers
    (100 * tp >= k * total_gt), so a recall of exactly 0.07 counts for the
    0.07 level even though float(0.07) grids disagree.
    """
    if total_gt < 1:
        raise UndefinedMetricError("average precision needs at least one ground-truth box")
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    order = np.argsort(-np.asarray(confidences, dtype=np.float64), kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(100 * tp, np.arange(RECALL_LEVELS) * total_gt, side="left")
    sampled = [float(envelope[i]) if i < len(envelope) else 0.0 for i in idx]
    return math.fsum(sampled) / RECALL_LEVELS


def evaluate_detections(preds_per_image: list[list[Detection]], gts_per_image: list[list[Box]],
                        conf_threshold: float = 0.0) -> DetReport:
    """Dataset-level precision/recall at IoU 0.5 and mAP50 / mAP50-95.

    Precision with zero predictions is reported as 0.
    """
    total_gt = sum(len(g) for g in gts_per_image)
    if total_gt == 0:
        raise UndefinedMetricError("no ground-truth boxes in the evaluation set")
    preds_per_image = [sorted(p, key=lambda d: -d.confidence) for p in preds_per_image]
    aps = []
    tp50 = n_pred = 0
    for thr in IOU_THRESHOLDS:
        flags, confs = [], []
        for preds, gts in zip(preds_per_image, gts_per_image):
            f, _ = match_detections(preds, gts, thr)
            flags += f
            confs += [d.confidence for d in preds]
        aps.append(average_precision(flags, confs, total_gt))
        if thr == 0.5:
            kept = [f for f, c in zip(flags, confs) if c >= conf_threshold]
            tp50, n_pred = sum(kept), len(kept)
    return DetReport(precision=tp50 / n_pred if n_pred else 0.0, recall=tp50 / total_gt,
                     map50=aps[0], map50_95=math.fsum(aps) / len(aps),
                     n_images=len(gts_per_image), n_gt=total_gt, n_pred=n_pred)


class PatchDetector:
    """Patch classifier slid over the image with stride patch/2.

    The image is edge-padded by patch/4 so the central stride x stride cell
    of each patch tiles the original image exactly; a patch's lesion
    probability is painted onto its central cell.
    """

    def __init__(self, patch: int, rng: np.random.Generator):
        self.patch, self.stride = patch, patch // 2
        half = patch // 2
        self.net = Sequential([
            Conv2d(3, 8, 3, rng), ReLU(),
            Conv2d(8, 16, 3, rng, stride=2), ReLU(),
            Flatten(), Dense(16 * half * half, 2, rng),
        ], (3, patch, patch))
        self.trained = False

    def patches(self, image: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
        """All grid patches as (N,3,p,p) in [-1,1] plus the grid shape."""
        p, s = self.patch, self.stride
        h, w = image.shape[:2]
        if h % s or w % s:
            raise ConfigError(f"image {h}x{w} not divisible by stride {s}")
        pad = p // 4
        padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
        gh, gw = h // s, w // s
        win = np.lib.stride_tricks.sliding_window_view(padded, (p, p), axis=(0, 1))[::s, ::s][:gh, :gw]
        x = win.reshape(gh * gw, 3, p, p) * 2.0 - 1.0
        return x, (gh, gw)

    def probability_map(self, image: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise UsageError("detector has not been trained")
        x, (gh, gw) = self.patches(image)
        probs = softmax(self.net.forward(x), axis=1)[:, 1].reshape(gh, gw)
        return np.kron(probs, np.ones((self.stride, self.stride)))


def cell_labels(boxes: list[BBox], size: int, stride: int) -> np.ndarray:
    """1 where at least half of a grid cell is covered by a box."""
    cover = np.zeros((size, size))
    for b in boxes:
        x, y, w, h = b.to_pixels(size, size)
        cover[int(round(y)):int(round(y + h)), int(round(x)):int(round(x + w))] = 1.0
    g = size // stride
    return (cover.reshape(g, stride, g, stride).mean(axis=(1, 3)) >= 0.5).astype(np.int64)


def train_detector(items: list[tuple[np.ndarray, list[BBox]]], cfg: DetConfig) -> PatchDetector:
    """SGD-momentum training on balanced lesion/background patches."""
    rng = np.random.default_rng(cfg.seed)
    det = PatchDetector(cfg.patch, rng)
    xs, ys = [], []
    for image, boxes in items:
        x, _ = det.patches(image)
        lab = cell_labels(boxes, image.shape[0], det.stride).ravel()
        pos, neg = np.flatnonzero(lab == 1), np.flatnonzero(lab == 0)
        pick = np.concatenate([
            rng.choice(pos, min(len(pos), cfg.positives_per_image), replace=False),
            rng.choice(neg, min(len(neg), cfg.negatives_per_image), replace=False)])
        xs.append(x[pick])
        ys.append(lab[pick])
    x_all, y_all = np.concatenate(xs), np.concatenate(ys)
    opt = sgd_momentum(cfg.learning_rate, cfg.momentum)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x_all))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            det.net.zero_grad()
            _, grad = cross_entropy_loss(det.net.forward(x_all[idx]), y_all[idx])
            det.net.backward(grad)
            optimizer_step(det.net.parameters(), det.net.gradients(), opt)
    det.trained = True
    return det


def detect(model: PatchDetector | None, image: np.ndarray, cfg: DetConfig = DetConfig()) -> list[Detection]:
    if model is None or not model.trained:
        raise UsageError("detect needs a trained patch detector")
    return boxes_from_probability_map(model.probability_map(image), cfg.threshold, cfg.nms_iou)


def gt_boxes(sample: Sample) -> list[Box]:
    h, w = sample.image.shape[:2]
    return [b.to_pixels(w, h) for b in sample.boxes]


def run_detection_arm(dataset: Dataset | list[Sample], synth_bank: dict[str, list[np.ndarray]] | None,
                      cfg: DetConfig, use_synth: bool) -> DetReport:
    """Trains on all but one stratified fold (plus synthetics of the training
    originals, which keep their source boxes) and evaluates on that fold."""
    samples = dataset.samples if isinstance(dataset, Dataset) else list(dataset)
    index = {s.id: s for s in samples}
    train_ids, test_ids = split_kfold(samples, cfg.k, cfg.seed)[cfg.holdout_fold]
    items = [(index[i].image, index[i].boxes) for i in train_ids]
    if use_synth and synth_bank and cfg.oversample_factor > 0:
        lesion_ids = {s.id for s in samples if s.label == "lesion"}
        synth = synthetic_training_items(train_ids, test_ids, lesion_ids, synth_bank, cfg.oversample_factor)
        items += [(img, index[sid].boxes) for sid, img in synth]
    model = train_detector(items, cfg)
    test = [index[i] for i in test_ids]
    preds = [detect(model, s.image, cfg) for s in test]
    return evaluate_detections(preds, [gt_boxes(s) for s in test])


def run_detection_experiment(dataset, synth_bank, cfg: DetConfig) -> dict[str, DetReport]:
    return {"original": run_detection_arm(dataset, synth_bank, cfg, use_synth=False),
            "synthetic": run_detection_arm(dataset, synth_bank, cfg, use_synth=True)}
