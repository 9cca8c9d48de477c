"""Small-CNN lesion classifier, AUROC, oversampled k-fold CV and Grad-CAM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.special import softmax
from scipy.stats import rankdata

from ..errors import ConfigError, LeakageError, UndefinedMetricError
from ..phantom import Dataset, Sample, split_kfold
from ..tensornet import (
    Conv2d, Dense, GlobalAvgPool, ReLU, Sequential, adam, cross_entropy_loss,
    optimizer_step,
)

log = logging.getLogger(__name__)

LABELS = {"normal": 0, "lesion": 1}


@dataclass(frozen=True)
class ClassifierHyper:
    epochs: int = 12
    learning_rate: float = 2e-3
    batch_size: int = 8
    seed: int = 0


@dataclass(frozen=True)
class CVConfig:
    k: int = 5
    oversample_factor: int = 4
    classifier: ClassifierHyper = field(default_factory=ClassifierHyper)
    seed: int = 0

    def __post_init__(self):
        if self.oversample_factor < 0:
            raise ConfigError("oversample_factor must be >= 0")


class Classifier:
    """Three conv blocks (stride-2 conv + ReLU), global pooling, two logits.

    No normalization layers: per-image normalization would erase the global
    colour and intensity statistics that the pooled features must carry when
    they are reused for FID and the perceptual distance.

    ``taps`` are the layer indices whose outputs are the block feature maps;
    the last one is the Grad-CAM target and its pooled form is the
    penultimate feature vector.
    """

    def __init__(self, image_size: int, rng: np.random.Generator, widths=(16, 32, 64)):
        layers, c = [], 3
        self.taps = []
        for w in widths:
            layers += [Conv2d(c, w, 3, rng, stride=2), ReLU()]
            self.taps.append(len(layers))
            c = w
        layers += [GlobalAvgPool(), Dense(c, 2, rng)]
        self.net = Sequential(layers, (3, image_size, image_size))
        self.image_size = image_size
        self.widths = tuple(widths)
        self.feature_dim = c

    def describe(self) -> dict:
        return {"arch": "classifier", "image_size": self.image_size, "widths": list(self.widths)}

    @staticmethod
    def prepare(images: np.ndarray) -> np.ndarray:
        """(N,H,W,3) in [0,1] -> (N,3,H,W) in [-1,1]."""
        return np.moveaxis(np.asarray(images, dtype=np.float64), -1, 1) * 2.0 - 1.0

    def logits(self, images: np.ndarray) -> np.ndarray:
        return self.net.forward(self.prepare(images))

    def lesion_scores(self, images: np.ndarray, batch: int = 64) -> np.ndarray:
        out = [softmax(self.logits(images[i:i + batch]), axis=1)[:, 1]
               for i in range(0, len(images), batch)]
        return np.concatenate(out) if out else np.zeros(0)

    def feature_maps(self, images: np.ndarray) -> list[np.ndarray]:
        x = self.prepare(images)
        maps, start = [], 0
        for stop in self.taps:
            x = self.net.forward(x, start=start, stop=stop)
            maps.append(x)
            start = stop
        return maps

    def features(self, images: np.ndarray, batch: int = 64) -> np.ndarray:
        """Globally pooled last feature map, shape (N, feature_dim)."""
        out = []
        for i in range(0, len(images), batch):
            out.append(self.feature_maps(images[i:i + batch])[-1].mean(axis=(2, 3)))
        return np.concatenate(out) if out else np.zeros((0, self.feature_dim))


def build_classifier(description: dict, seed: int = 0) -> Classifier:
    return Classifier(description["image_size"], np.random.default_rng(seed),
                      widths=tuple(description.get("widths", (16, 32, 64))))


def train_classifier(images: np.ndarray, labels: np.ndarray, hyper: ClassifierHyper) -> Classifier:
    """Adam + softmax cross-entropy on (N,H,W,3) images with 0/1 labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ConfigError("classifier training set must contain both classes")
    rng = np.random.default_rng(hyper.seed)
    model = Classifier(images.shape[1], rng)
    opt = adam(hyper.learning_rate)
    x_all = Classifier.prepare(images)
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for i in range(0, len(order), hyper.batch_size):
            idx = order[i:i + hyper.batch_size]
            model.net.zero_grad()
            loss, grad = cross_entropy_loss(model.net.forward(x_all[idx]), labels[idx])
            model.net.backward(grad)
            optimizer_step(model.net.parameters(), model.net.gradients(), opt)
            total += loss * len(idx)
        log.debug("classifier epoch %d loss %.4f", epoch + 1, total / len(order))
    return model


def auroc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg), ties counted as one half via midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def summarize(values) -> dict:
    """Mean and standard deviation as reported in the CV tables.

    The spread uses the population form (ddof=0); published fold values
    reproduce their reported ``mean ± sd`` only under that convention.
    """
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0))}


@dataclass
class FoldResult:
    fold: int
    auroc: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_train: int
    n_synthetic: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CVResult:
    folds: list[FoldResult]
    use_synth: bool
    models: list = field(default_factory=list, repr=False)   # per-fold classifiers, not serialized

    @property
    def auroc(self) -> dict:
        return summarize([f.auroc for f in self.folds])

    @property
    def accuracy(self) -> dict:
        return summarize([f.accuracy for f in self.folds])

    def to_dict(self) -> dict:
        return {"use_synth": self.use_synth, "folds": [f.to_dict() for f in self.folds],
                "overall": {"auroc": self.auroc, "accuracy": self.accuracy}}


def synthetic_training_items(train_ids: list[str], test_ids: list[str], lesion_ids: set[str],
                             synth_bank: dict[str, list[np.ndarray]], factor: int
                             ) -> list[tuple[str, np.ndarray]]:
    """``factor`` synthetics per lesion original in the training fold, cycling
    through that original's variants. Raises :class:`LeakageError` if any
    selected synthetic derives from a test-fold original."""
    items = []
    for sid in train_ids:
        variants = synth_bank.get(sid)
        if sid not in lesion_ids or not variants:
            continue
        for j in range(factor):
            items.append((sid, variants[j % len(variants)]))
    leaked = {sid for sid, _ in items} & set(test_ids)
    if leaked:
        raise LeakageError(f"synthetic images derived from test originals: {sorted(leaked)}")
    return items


def run_cv(dataset: Dataset | list[Sample], synth_bank: dict[str, list[np.ndarray]] | None,
           cfg: CVConfig, use_synth: bool) -> CVResult:
    samples = dataset.samples if isinstance(dataset, Dataset) else list(dataset)
    index = {s.id: s for s in samples}
    lesion_ids = {s.id for s in samples if s.label == "lesion"}
    folds, models = [], []
    for f, (train_ids, test_ids) in enumerate(split_kfold(samples, cfg.k, cfg.seed)):
        images = [index[i].image for i in train_ids]
        labels = [LABELS[index[i].label] for i in train_ids]
        synth = []
        if use_synth and synth_bank and cfg.oversample_factor > 0:
            synth = synthetic_training_items(train_ids, test_ids, lesion_ids, synth_bank,
                                             cfg.oversample_factor)
            images += [img for _, img in synth]
            labels += [1] * len(synth)
        hyper = ClassifierHyper(**{**cfg.classifier.__dict__, "seed": cfg.classifier.seed + f})
        model = train_classifier(np.stack(images), np.array(labels), hyper)
        models.append(model)
        test_x = np.stack([index[i].image for i in test_ids])
        test_y = np.array([LABELS[index[i].label] for i in test_ids])
        scores = model.lesion_scores(test_x)
        pred = (scores >= 0.5).astype(int)
        folds.append(FoldResult(
            fold=f, auroc=auroc(scores, test_y), accuracy=float(np.mean(pred == test_y)),
            tp=int(((pred == 1) & (test_y == 1)).sum()), fp=int(((pred == 1) & (test_y == 0)).sum()),
            tn=int(((pred == 0) & (test_y == 0)).sum()), fn=int(((pred == 0) & (test_y == 1)).sum()),
            n_train=len(images), n_synthetic=len(synth)))
        log.info("fold %d: auroc %.4f accuracy %.4f (synthetic %d)", f, folds[-1].auroc,
                 folds[-1].accuracy, len(synth))
    return CVResult(folds=folds, use_synth=use_synth, models=models)


def bilinear_resize(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a 2-D map (edge values extended)."""
    h, w = arr.shape
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return map_coordinates(arr, [yy, xx], order=1, mode="nearest")


def grad_cam(model: Classifier, image: np.ndarray, target_class: int = 1) -> np.ndarray:
    """ReLU of gradient-weighted last-block feature maps, upsampled and max-normalized."""
    tap = model.taps[-1]
    x = model.prepare(image[None])
    acts = model.net.forward(x, stop=tap)
    logits = model.net.forward(acts, start=tap)
    onehot = np.zeros_like(logits)
    onehot[0, target_class] = 1.0
    model.net.zero_grad()
    dacts = model.net.backward(onehot, start=tap)
    weights = dacts[0].mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, acts[0], axes=1), 0.0)
    heat = np.maximum(bilinear_resize(cam, image.shape[0], image.shape[1]), 0.0)
    peak = heat.max()
    return heat / peak if peak > 0 else heat


def cam_containment(heat: np.ndarray, mask: np.ndarray) -> float:
    """Share of heatmap mass inside ``mask`` (0 for an all-zero heatmap)."""
    total = heat.sum()
    return float(heat[mask].sum() / total) if total > 0 else 0.0
