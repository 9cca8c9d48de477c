import numpy as np
import pytest

from _oracles import brute_auroc
from lesionforge.errors import ConfigError, LeakageError, UndefinedMetricError
from lesionforge.evaluator.classification import (
    Classifier, ClassifierHyper, CVConfig, LABELS, auroc, bilinear_resize, cam_containment,
    grad_cam, run_cv, summarize, synthetic_training_items, train_classifier,
)


def test_auroc_examples():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0]) == 0.75
    s = np.array([0.9, 0.8, 0.4, 0.3, 0.3])
    y = [1, 0, 1, 0, 1]
    assert auroc(s, y) == auroc(s * 10 + 5, y) == auroc(np.exp(s), y)
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])


def test_auroc_equals_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(2, 30))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.integers(0, 6, n) / 5.0   # plenty of ties
        assert auroc(s, y) == brute_auroc(s, y)


def test_summary_statistics_reproduce_published_row():
    out = summarize([0.9709, 0.9584, 0.9792, 0.9792, 0.9647])
    assert round(out["mean"], 4) == 0.9705
    assert round(out["std"], 4) == 0.0081


def test_separable_toy_set_reaches_full_accuracy():
    rng = np.random.default_rng(0)
    x = np.empty((10, 16, 16, 3))
    y = np.array([0, 1] * 5)
    for i, label in enumerate(y):
        x[i] = (0.75 if label else 0.25) + 0.02 * rng.standard_normal((16, 16, 3))
    model = train_classifier(x, y, ClassifierHyper(epochs=200, batch_size=10))
    assert np.all((model.lesion_scores(x) >= 0.5) == y)


def test_training_is_seed_deterministic(small_dataset):
    x = np.stack([s.image for s in small_dataset.samples])
    y = np.array([LABELS[s.label] for s in small_dataset.samples])
    a = train_classifier(x, y, ClassifierHyper(epochs=2, seed=4))
    b = train_classifier(x, y, ClassifierHyper(epochs=2, seed=4))
    for k, v in a.net.parameters().items():
        assert np.array_equal(v, b.net.parameters()[k])


def test_single_class_rejected():
    with pytest.raises(ConfigError):
        train_classifier(np.zeros((3, 16, 16, 3)), np.ones(3), ClassifierHyper(epochs=1))


def test_features_and_maps_shapes():
    m = Classifier(32, np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(size=(3, 32, 32, 3))
    maps = m.feature_maps(x)
    assert [f.shape for f in maps] == [(3, 16, 16, 16), (3, 32, 8, 8), (3, 64, 4, 4)]
    assert m.features(x).shape == (3, 64) and m.feature_dim == 64


def _bank(ids, k=3):
    return {i: [np.full((2, 2, 3), v / 10) for v in range(k)] for i in ids}


def test_synthetic_items_cycle_variants_and_guard_leakage():
    items = synthetic_training_items(["a", "b", "n"], ["c"], {"a", "b", "c"}, _bank("abc"), 4)
    assert [sid for sid, _ in items] == ["a"] * 4 + ["b"] * 4
    assert items[3][1][0, 0, 0] == 0.0   # variant 0 reused for the 4th copy
    with pytest.raises(LeakageError):
        synthetic_training_items(["a", "c"], ["c"], {"a", "c"}, _bank("ac"), 1)


def test_run_cv_flag_semantics(small_dataset):
    cfg = CVConfig(k=3, oversample_factor=0, classifier=ClassifierHyper(epochs=2))
    ids = [s.id for s in small_dataset.samples if s.label == "lesion"]
    bank = {i: [small_dataset.by_id()[i].image] * 3 for i in ids}
    plain = run_cv(small_dataset, bank, cfg, use_synth=False)
    zero = run_cv(small_dataset, bank, cfg, use_synth=True)
    assert plain.to_dict()["folds"] == zero.to_dict()["folds"]
    again = run_cv(small_dataset, None, cfg, use_synth=False)
    assert plain.to_dict()["folds"] == again.to_dict()["folds"]
    for f in plain.folds:
        assert 0 <= f.auroc <= 1 and 0 <= f.accuracy <= 1
        assert f.tp + f.fp + f.tn + f.fn == 10
    aug = run_cv(small_dataset, bank, CVConfig(k=3, oversample_factor=2,
                                               classifier=ClassifierHyper(epochs=2)), use_synth=True)
    assert all(f.n_synthetic > 0 for f in aug.folds)


def test_bilinear_resize():
    a = np.arange(4.0).reshape(2, 2)
    up = bilinear_resize(a, 4, 4)
    assert up.shape == (4, 4)
    assert up[0, 0] == 0.0 and up[-1, -1] == 3.0
    assert up[0, 1] == pytest.approx(0.25)
    assert np.allclose(bilinear_resize(np.full((3, 3), 2.0), 7, 5), 2.0)


def test_grad_cam_properties(small_dataset):
    x = np.stack([s.image for s in small_dataset.samples])
    y = np.array([LABELS[s.label] for s in small_dataset.samples])
    model = train_classifier(x, y, ClassifierHyper(epochs=4))
    for s in small_dataset.samples[-5:]:
        heat = grad_cam(model, s.image)
        assert heat.shape == (32, 32) and heat.min() >= 0
        assert heat.max() == pytest.approx(1.0) or heat.max() == 0.0


def test_grad_cam_zero_gradient_gives_zero_map():
    model = Classifier(16, np.random.default_rng(0))
    dense = model.net.layers[-1]
    dense.params["W"][...] = 0.0
    heat = grad_cam(model, np.random.default_rng(1).uniform(size=(16, 16, 3)))
    assert not heat.any()


def test_cam_containment():
    heat = np.zeros((4, 4))
    heat[0, 0] = 1.0
    heat[3, 3] = 1.0
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = True
    assert cam_containment(heat, mask) == 0.5
    assert cam_containment(np.zeros((4, 4)), mask) == 0.0
