import math
import warnings

import numpy as np
import pytest
import scipy.linalg

from lesionforge.errors import EmptyInputError, NumericError, ShapeError
from lesionforge.evaluator.classification import ClassifierHyper, LABELS, train_classifier
from lesionforge.metrics import (
    FeatureExtractor, fid, fid_from_features, frechet_distance, gaussian_stats, metric_report,
    perceptual_distance, psnr, ssim, to_luma,
)


@pytest.fixture(scope="module")
def fx(small_dataset):
    x = np.stack([s.image for s in small_dataset.samples])
    y = np.array([LABELS[s.label] for s in small_dataset.samples])
    return FeatureExtractor(train_classifier(x, y, ClassifierHyper(epochs=4)), "test")


def _img(seed, shape=(24, 24, 3)):
    return np.random.default_rng(seed).uniform(0.1, 0.9, shape)


def test_psnr_examples():
    a = _img(0)
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    region = np.ones(a.shape[:2], dtype=bool)
    b = _img(1)
    assert psnr(a, b, region) == psnr(a, b)
    with pytest.raises(ShapeError):
        psnr(a, a[:5])
    with pytest.raises(EmptyInputError):
        psnr(a, b, ~region)


def test_psnr_region_only_counts_region():
    a = np.zeros((8, 8, 3))
    b = a.copy()
    b[:4] = 0.1
    region = np.zeros((8, 8), dtype=bool)
    region[:4] = True
    assert psnr(a, b, region) == pytest.approx(20.0)
    assert psnr(a, b, ~region) == math.inf


def test_ssim_identity_exact():
    a = _img(2)
    assert ssim(a, a) == 1.0


def test_ssim_constant_images_hand_value():
    a, b = np.full((16, 16, 3), 0.2), np.full((16, 16, 3), 0.8)
    expected = (2 * 0.16 + 1e-4) / (0.04 + 0.64 + 1e-4)
    assert expected == pytest.approx(0.4707, abs=1e-4)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-12)


def test_ssim_symmetric():
    for i in range(100):
        a, b = _img(3 * i), _img(3 * i + 1)
        assert ssim(a, b) == ssim(b, a)


def test_ssim_bounds_and_errors():
    a, b = _img(5), 1.0 - _img(5)
    assert -1.0 <= ssim(a, b) <= 1.0
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
    with pytest.raises(EmptyInputError):
        ssim(a, b, np.zeros(a.shape[:2], dtype=bool))


def test_ssim_region_uses_window_centres():
    a, b = _img(6), _img(7)
    full = np.ones(a.shape[:2], dtype=bool)
    assert ssim(a, b, full) == ssim(a, b)
    border = np.zeros(a.shape[:2], dtype=bool)
    border[:5] = True   # no window centre lies in the first 5 rows
    with pytest.raises(EmptyInputError):
        ssim(a, b, border)


def test_luma_weights():
    assert to_luma(np.array([[[1.0, 0.0, 0.0]]]))[0, 0] == pytest.approx(0.299)


def test_perceptual_distance_identity_and_sign(fx, small_dataset):
    imgs = [s.image for s in small_dataset.samples]
    assert perceptual_distance(imgs[0], imgs[0], fx) == 0.0
    for i in range(5):
        assert perceptual_distance(imgs[i], imgs[i + 1], fx) >= 0.0


def test_perceptual_distance_monotone_under_interpolation(fx, small_dataset):
    imgs = [s.image for s in small_dataset.samples]
    rng = np.random.default_rng(0)
    ok = 0
    for _ in range(200):
        i, j = rng.choice(len(imgs), 2, replace=False)
        a, b = imgs[i], imgs[j]
        ok += perceptual_distance(a, 0.5 * (a + b), fx) <= perceptual_distance(a, b, fx)
    assert ok >= 190


def test_frechet_identical_is_zero():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 6))
    c = a @ a.T
    mu = rng.standard_normal(6)
    assert abs(frechet_distance(mu, c, mu, c)) < 1e-9


def test_frechet_one_dimensional_closed_form():
    assert frechet_distance([0.0], [[0.0]], [1.0], [[0.0]]) == 1.0
    rng = np.random.default_rng(1)
    for _ in range(50):
        m1, m2, s1, s2 = rng.standard_normal(2).tolist() + rng.uniform(0.1, 3, 2).tolist()
        d = frechet_distance([m1], [[s1 ** 2]], [m2], [[s2 ** 2]])
        assert d == pytest.approx((m1 - m2) ** 2 + (s1 - s2) ** 2, abs=1e-9)


def test_frechet_diagonal_closed_form():
    rng = np.random.default_rng(2)
    for _ in range(50):
        d = int(rng.integers(1, 10))
        c1, c2 = rng.uniform(0, 4, d), rng.uniform(0, 4, d)
        m1, m2 = rng.standard_normal(d), rng.standard_normal(d)
        ref = np.sum((np.sqrt(c1) - np.sqrt(c2)) ** 2) + np.sum((m1 - m2) ** 2)
        assert frechet_distance(m1, np.diag(c1), m2, np.diag(c2)) == pytest.approx(ref, abs=1e-6)


def test_frechet_matches_scipy_sqrtm_and_is_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
        c1, c2 = a @ a.T + 0.1 * np.eye(5), b @ b.T + 0.1 * np.eye(5)
        m1, m2 = rng.standard_normal(5), rng.standard_normal(5)
        covmean = scipy.linalg.sqrtm(c1 @ c2).real
        ref = np.sum((m1 - m2) ** 2) + np.trace(c1 + c2 - 2 * covmean)
        d = frechet_distance(m1, c1, m2, c2)
        assert d == pytest.approx(ref, rel=1e-8, abs=1e-9)
        assert d == pytest.approx(frechet_distance(m2, c2, m1, c1), rel=1e-10)


def test_frechet_errors():
    with pytest.raises(ShapeError):
        frechet_distance(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))
    with pytest.raises(NumericError):
        frechet_distance(np.array([np.nan]), [[1.0]], [0.0], [[1.0]])


def test_frechet_rank_deficient_is_clamped():
    v = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert frechet_distance(np.zeros(2), v, np.zeros(2), v) >= 0.0


def test_gaussian_stats_uses_n_minus_one():
    f = np.array([[0.0], [2.0]])
    mu, c = gaussian_stats(f)
    assert mu[0] == 1.0 and c[0, 0] == 2.0


def test_fid_identity_and_perturbation(fx, small_dataset):
    x = np.stack([s.image for s in small_dataset.samples])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        base = fid(x, x, fx)
        y = x.copy()
        y[0] = np.random.default_rng(0).uniform(size=y[0].shape)
        assert base < 1e-6
        assert fid(x, y, fx) > base


def test_fid_warns_when_undersampled(fx, small_dataset):
    x = np.stack([s.image for s in small_dataset.samples[:5]])
    with pytest.warns(RuntimeWarning):
        fid(x, x, fx)
    with pytest.raises(EmptyInputError):
        fid(x[:0], x, fx)


def test_fid_sampling_oracle():
    rng = np.random.default_rng(0)
    d = 8
    a, b = rng.standard_normal((d, d)), rng.standard_normal((d, d))
    c1, c2 = a @ a.T / d + 0.1 * np.eye(d), b @ b.T / d + 0.1 * np.eye(d)
    m1, m2 = np.zeros(d), rng.standard_normal(d)
    f1 = rng.multivariate_normal(m1, c1, 10_000)
    f2 = rng.multivariate_normal(m2, c2, 10_000)
    true = frechet_distance(m1, c1, m2, c2)
    assert fid_from_features(f1, f2) == pytest.approx(true, rel=0.05)


def test_metric_report_keys(fx, small_dataset):
    les = [s for s in small_dataset.samples if s.label == "lesion"]
    origs = [s.image for s in les[:3]]
    synth = [np.clip(o + 0.02, 0, 1) for o in origs]
    masks = [s.union_mask for s in les[:3]]
    rep = metric_report(origs, synth, masks, np.stack([s.image for s in les]), fx)
    assert set(rep) == {"psnr", "ssim", "perc", "fid", "psnr_mask", "ssim_mask", "n_pairs", "extractor"}
    assert rep["n_pairs"] == 3 and rep["extractor"] == "test" and rep["perc"] >= 0
    same = metric_report(origs, origs, masks, np.stack(origs), fx)
    assert same["psnr"] == "inf" and same["ssim"] == 1.0
