"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the terminal summary.
The desk-scale diffusion model is trained once per session (criteria 8 and 9
share it); expect roughly half an hour on one core.
"""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from _oracles import brute_auroc, check_condition_embedding, check_layer, envelope_ap, layer_cases
from _report import record
from lesionforge.cli import main
from lesionforge.config import load_config
from lesionforge.diffusion import (
    EmptyMaskWarning, SynthParams, Token, UNet, cfg_epsilon, inpaint, make_schedule, sample,
)
from lesionforge.evaluator.classification import (
    ClassifierHyper, LABELS, auroc, cam_containment, grad_cam, run_cv, summarize, train_classifier,
)
from lesionforge.evaluator.detection import Detection, average_precision, evaluate_detections, run_detection_experiment
from lesionforge.io import load_image, read_dataset, save_image
from lesionforge.metrics import (
    FeatureExtractor, fid, fid_from_features, frechet_distance, perceptual_distance, psnr, ssim,
)
from lesionforge.phantom import Dataset, PhantomConfig, generate_dataset, split_kfold
from lesionforge.pipeline import _load_denoiser, run_stage
from lesionforge.seeding import derive_seed
from lesionforge.segmenter import bbox_center, mask_iou, segment_sample

pytestmark = pytest.mark.slow


def test_criterion_01_gradients():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = {}
    for name, make in sorted(layer_cases().items()):
        worst[name] = max(_one(make, rng) for _ in range(50))
    worst["condition_embedding"] = max(check_condition_embedding(rng) for _ in range(50))
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    record(1, ok, f"{len(worst)} layer types x 50, worst {top} {worst[top]:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


def _one(make, rng):
    layer, x, emb = make(rng)
    return check_layer(layer, x, rng, emb)


@pytest.fixture(scope="module")
def small_fx():
    ds = generate_dataset(PhantomConfig(n_normal=10, n_lesion=20, image_size=32, seed=3))
    x = np.stack([s.image for s in ds.samples])
    y = np.array([LABELS[s.label] for s in ds.samples])
    return FeatureExtractor(train_classifier(x, y, ClassifierHyper(epochs=4)), "acceptance"), x


def test_criterion_02_metric_identities(small_fx):
    fx, x = small_fx
    start = time.perf_counter()
    a = x[0]
    const = ssim(np.full((16, 16, 3), 0.2), np.full((16, 16, 3), 0.8))
    with pytest.warns(RuntimeWarning):   # 30 images in 64-D
        fid_xx = fid(x, x, fx)
    checks = {
        "psnr(a,a)=inf": psnr(a, a) == math.inf,
        "ssim(a,a)=1": ssim(a, a) == 1.0,
        "fid(X,X)<1e-6": fid_xx < 1e-6,
        "perc(a,a)=0": perceptual_distance(a, a, fx) == 0.0,
        "const ssim": abs(const - 0.4707) <= 1e-4,
        "1-D frechet": abs(frechet_distance([0.3], [[4.0]], [-1.2], [[0.25]]) - (1.5 ** 2 + 1.5 ** 2)) <= 1e-9
        and frechet_distance([0.0], [[0.0]], [1.0], [[0.0]]) == 1.0,
    }
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 60
    failed = [k for k, v in checks.items() if not v]
    record(2, ok, f"{len(checks) - len(failed)}/{len(checks)} identities"
           + (f" failed: {', '.join(failed)}" if failed else "") + f", {elapsed:.1f}s")
    assert ok


def test_criterion_03_fid_oracle():
    rng = np.random.default_rng(0)
    d = 8
    a, b = rng.standard_normal((d, d)), rng.standard_normal((d, d))
    c1, c2 = a @ a.T / d + 0.1 * np.eye(d), b @ b.T / d + 0.1 * np.eye(d)
    m1, m2 = np.zeros(d), rng.standard_normal(d)
    true = frechet_distance(m1, c1, m2, c2)
    est = fid_from_features(rng.multivariate_normal(m1, c1, 10_000), rng.multivariate_normal(m2, c2, 10_000))
    rel = abs(est - true) / true
    ok = rel < 0.05
    record(3, ok, f"closed form {true:.4f}, sampled {est:.4f}, rel err {rel:.3%} (< 5%)")
    assert ok


def test_criterion_04_ranking_oracles():
    rng = np.random.default_rng(1)
    auc_ok = 0
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.integers(0, 8, n) / 7.0
        auc_ok += auroc(s, y) == brute_auroc(s, y)
    ap_ok = 0
    for _ in range(500):
        n = int(rng.integers(1, 50))
        flags = list(rng.random(n) < 0.5)
        conf = list(rng.integers(0, 12, n) / 11.0)
        total = int(sum(flags) + rng.integers(0, 6)) or 1
        ap_ok += average_precision(flags, conf, total) == envelope_ap(flags, conf, total)
    rep = evaluate_detections([[Detection((2.5, 0.0, 10.0, 10.0), 0.8)]], [[(0.0, 0.0, 10.0, 10.0)]])
    ok = auc_ok == 1000 and ap_ok == 500 and rep.map50 == 1.0 and rep.map50_95 == 0.3
    record(4, ok, f"AUROC exact {auc_ok}/1000, AP exact {ap_ok}/500, "
                  f"IoU-0.6 example AP50 {rep.map50} mAP50-95 {rep.map50_95}")
    assert ok


def test_criterion_05_table_summary():
    out = summarize([0.9709, 0.9584, 0.9792, 0.9792, 0.9647])
    got = f"{out['mean']:.4f} ± {out['std']:.4f}"
    ok = got == "0.9705 ± 0.0081"
    record(5, ok, f"report gives {got} (published 0.9705 ± 0.0081)")
    assert ok


def test_criterion_06_inpainting_preservation(tmp_path):
    rng = np.random.default_rng(2)
    net = UNet(16, np.random.default_rng(0), base=8, emb_dim=16).astype(np.float32)
    sched = make_schedule()
    worst_raw = worst_png = 0.0
    for i in range(100):
        img = rng.uniform(size=(16, 16, 3))
        mask = rng.random((16, 16)) < rng.uniform(0.05, 0.6)
        mask[rng.integers(16), rng.integers(16)] = True
        out = inpaint(img, mask, net, sched, SynthParams(inference_steps=3, variants=1, seed=i))[0]
        worst_raw = max(worst_raw, float(np.max(np.abs(out - img)[~mask], initial=0.0)))
        save_image(tmp_path / "o.png", out)
        back = load_image(tmp_path / "o.png")
        worst_png = max(worst_png, float(np.max(np.abs(back - img)[~mask], initial=0.0)))
    img = rng.uniform(size=(16, 16, 3))
    with pytest.warns(EmptyMaskWarning):
        empty = inpaint(img, np.zeros((16, 16), dtype=bool), net, sched, SynthParams(inference_steps=3))
    empty_ok = all(np.array_equal(e, img) for e in empty)
    x = rng.standard_normal((2, 3, 16, 16)).astype(np.float32)
    g1 = np.array_equal(cfg_epsilon(net, x, 50, Token.LESION, Token.DEGRADED, 1.0),
                        net.forward(x, 50, Token.LESION))
    g0 = np.array_equal(cfg_epsilon(net, x, 50, Token.LESION, Token.DEGRADED, 0.0),
                        net.forward(x, 50, Token.DEGRADED))
    ok = worst_raw == 0.0 and worst_png <= 1 / 255 and empty_ok and g0 and g1
    record(6, ok, f"100 pairs: outside-mask max dev {worst_raw} raw, {worst_png * 255:.2f}/255 after PNG; "
                  f"empty mask identity {empty_ok}; g=0/g=1 bit-exact {g0}/{g1}")
    assert ok


def test_criterion_07_segmenter(default_dataset):
    start = time.perf_counter()
    ious, contains = [], True
    for s in default_dataset.samples:
        if not s.boxes:
            continue
        masks, _ = segment_sample(s.image, s.boxes)
        h, w = s.image.shape[:2]
        for m, b, g in zip(masks, s.boxes, s.masks):
            p = bbox_center(b, w, h)
            contains &= bool(m[p.y, p.x])
            ious.append(mask_iou(m, g))
    elapsed = time.perf_counter() - start
    ok = np.mean(ious) >= 0.7 and contains and elapsed < 120
    record(7, ok, f"mean IoU {np.mean(ious):.4f} over {len(ious)} masks (>= 0.7), "
                  f"seed contained {contains}, {elapsed:.1f}s (< 120s)")
    assert ok


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """Default desk preset: generate, segment and train the denoiser once."""
    out = tmp_path_factory.mktemp("desk")
    cfg = load_config()
    start = time.perf_counter()
    for stage in ("generate", "segment", "train-diffusion"):
        run_stage(stage, cfg, out)
    return cfg, out, time.perf_counter() - start


def test_criterion_08_generative_sanity(desk_run):
    cfg, out, train_time = desk_run
    start = time.perf_counter()
    ds = read_dataset(out / "dataset")
    net = _load_denoiser(out)
    p = cfg.diffusion.params
    sched = make_schedule(p.T, p.beta_start, p.beta_end)
    n = 48
    synth = sample(net, sched, cfg.synth, n=n)
    x = np.stack([s.image for s in ds.samples])
    y = np.array([LABELS[s.label] for s in ds.samples])
    fx = FeatureExtractor(train_classifier(x, y, cfg.metrics.extractor), "desk")
    real = x[y == 1]
    noise = np.random.default_rng(5).uniform(size=synth.shape)
    with pytest.warns(RuntimeWarning):   # 48 samples in 64-D: rank-deficient covariance is expected
        f_synth = fid(synth, real, fx)
    with pytest.warns(RuntimeWarning):
        f_noise = fid(noise, real, fx)
    total = train_time + time.perf_counter() - start
    ok = f_synth < f_noise / 5 and p.steps <= 20_000 and total <= 45 * 60
    record(8, ok, f"FID synth {f_synth:.1f} vs noise/5 {f_noise / 5:.1f} ({n} samples, "
                  f"{p.steps} steps), {total / 60:.1f} min (<= 45)")
    assert ok


def _halved(ds: Dataset) -> Dataset:
    lesions = [s for s in ds.samples if s.label == "lesion"]
    keep = {s.id for s in lesions[::2]}
    return Dataset(samples=[s for s in ds.samples if s.label == "normal" or s.id in keep],
                   config=ds.config, seed=ds.seed)


def test_criterion_09_protocol_direction(desk_run):
    cfg, out, _ = desk_run
    ds = _halved(read_dataset(out / "dataset"))
    net = _load_denoiser(out)
    p = cfg.diffusion.params
    sched = make_schedule(p.T, p.beta_start, p.beta_end)
    # fewer reverse steps than the default keeps this check inside a few minutes
    synth = replace(cfg.synth, inference_steps=25)
    bank = {}
    for n, s in enumerate(ds.samples):
        if s.label != "lesion":
            continue
        masks, _ = segment_sample(s.image, s.boxes, cfg.segmenter)
        bank[s.id] = inpaint(s.image, np.any(masks, axis=0), net, sched, replace(synth, seed=derive_seed(synth.seed, n)))
    base = run_cv(ds, None, cfg.classification, use_synth=False)
    aug = run_cv(ds, bank, cfg.classification, use_synth=True)
    det = run_detection_experiment(ds, bank, cfg.detection)
    b, a = base.accuracy, aug.accuracy
    d_acc = a["mean"] - b["mean"]
    d_map = det["synthetic"].map50 - det["original"].map50
    soft = d_acc >= -0.01 and d_map >= -0.02
    hard_fail = d_acc < -0.05 or d_map < -0.05
    status = "PASS" if soft else ("FAIL" if hard_fail else "SOFT-FAIL (reported)")
    n_les = sum(s.label == "lesion" for s in ds.samples)
    record(9, not hard_fail,
           f"{n_les} lesions; accuracy {b['mean']:.4f} ± {b['std']:.4f} -> {a['mean']:.4f} ± {a['std']:.4f} "
           f"(delta {d_acc:+.4f}, soft >= -0.01); mAP50 {det['original'].map50:.4f} -> "
           f"{det['synthetic'].map50:.4f} (delta {d_map:+.4f}, soft >= -0.02)", status)
    assert not hard_fail


def test_criterion_10_gradcam_containment(desk_run):
    cfg, out, _ = desk_run
    ds = read_dataset(out / "dataset")
    cv = cfg.classification
    result = run_cv(ds, None, cv, use_synth=False)
    by_id = ds.by_id()
    hits = total = 0
    for (_, test_ids), model in zip(split_kfold(ds.samples, cv.k, cv.seed), result.models):
        for sid in test_ids:
            s = by_id[sid]
            if s.label != "lesion" or model.lesion_scores(s.image[None])[0] < 0.5:
                continue
            mask = s.union_mask
            total += 1
            hits += cam_containment(grad_cam(model, s.image), mask) > mask.mean()
    rate = hits / total if total else 0.0
    ok = total > 0 and rate >= 0.8
    record(10, ok, f"{hits}/{total} correctly classified held-out lesions contained ({rate:.1%}, >= 80%)")
    assert ok


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_11_determinism(tmp_path):
    start = time.perf_counter()
    codes = [main(["pipeline", "--preset", "smoke", "--seed", "7", "--out", str(tmp_path / r)])
             for r in ("a", "b")]
    elapsed = time.perf_counter() - start
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    differ = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    reports = ("metrics.json", "cv_report.json", "det_report.json", "segment_report.json",
               "figures/inpaint.png", "figures/gradcam.png")
    present = all(r in a for r in reports)
    ok = codes == [0, 0] and not differ and present and elapsed < 600
    record(11, ok, f"{len(a)} files, {len(differ)} differ, reports present {present}, "
                   f"{elapsed:.0f}s for two runs (< 600s)")
    assert ok
