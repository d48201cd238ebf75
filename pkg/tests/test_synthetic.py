import time

import numpy as np
import pytest

from exprfv.core import DataError, validate_dataset
from exprfv.pipeline import activation_frequency
from exprfv.stats import spearman
from exprfv.synthetic import (ClassifierConfig, SyntheticSpec, generate_synthetic,
                              recompute_scores, train_frame_classifier)


class TestGenerator:
    def test_valid_and_spread(self):
        ds, manifest = generate_synthetic(SyntheticSpec(V=30, T_range=(50, 80), seed=4))
        assert validate_dataset(ds) == []
        S = ds.symptom_matrix()
        assert all(len(np.unique(S[:, j])) >= 3 for j in range(S.shape[1]))

    def test_manifest_recomputes_scores(self):
        ds, manifest = generate_synthetic(SyntheticSpec(V=25, T_range=(40, 60), seed=9))
        np.testing.assert_array_equal(recompute_scores(manifest), ds.symptom_matrix())
        F = np.array([activation_frequency(s) for s in ds.sequences])
        np.testing.assert_array_equal(F, np.array(manifest["true_frequencies"]))

    def test_deterministic(self):
        spec = SyntheticSpec(V=5, T_range=(30, 40), seed=2)
        a, _ = generate_synthetic(spec)
        b, _ = generate_synthetic(spec)
        for x, y in zip(a.sequences, b.sequences):
            assert x.frames.tobytes() == y.frames.tobytes()
        assert a.records == b.records

    def test_single_frequency_map(self):
        N = 11
        score_map = np.zeros((4, N))
        score_map[:, 7] = 1.0
        ds, manifest = generate_synthetic(SyntheticSpec(V=40, T_range=(200, 300), noise_sd=0.0,
                                                        score_map=score_map.tolist(), seed=5))
        F = np.array(manifest["true_frequencies"])
        raw = np.array(manifest["raw_scores"])
        assert spearman(F[:, 7], raw[:, 0]).rho == pytest.approx(1.0)
        assert spearman(F[:, 7], ds.symptom_matrix()[:, 0]).rho >= 0.95

    def test_panss_totals(self):
        ds, _ = generate_synthetic(SyntheticSpec(V=20, T_range=(30, 40), scale="PANSS-NEG", seed=1))
        assert validate_dataset(ds) == []

    def test_impossible_spread(self):
        with pytest.raises(DataError):
            generate_synthetic(SyntheticSpec(V=3, T_range=(5, 5), N=1, K_true=1, noise_sd=0.0, seed=0))

    def test_budget(self):
        t = time.perf_counter()
        generate_synthetic(SyntheticSpec(V=40, T_range=(500, 2000), N=11, seed=0))
        assert time.perf_counter() - t < 10.0


class TestFrameClassifier:
    def test_separable(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(-2, 0.5, (100, 2)), rng.normal(2, 0.5, (100, 2))])
        y = np.repeat([0, 1], 100)
        clf, report = train_frame_classifier(X, y, ClassifierConfig(epochs=50))
        assert report["accuracy"] >= 0.99 and report["f1"] >= 0.99

    def test_random_labels(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(800, 3))
        y = rng.integers(0, 2, 800)
        clf, _ = train_frame_classifier(X[:400], y[:400], ClassifierConfig(epochs=30, learning_rate=0.01))
        acc = np.mean(clf.predict(X[400:]) == y[400:])
        assert abs(acc - 0.5) <= 0.1

    def test_undersampling(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 2))
        y = np.array([1] * 10 + [0] * 90)
        _, report = train_frame_classifier(X, y, ClassifierConfig(epochs=5, undersample=True))
        assert report["class_counts"] == {"0": 10, "1": 10}

    def test_single_class(self):
        with pytest.raises(DataError):
            train_frame_classifier(np.zeros((4, 1)), [1, 1, 1, 1])
