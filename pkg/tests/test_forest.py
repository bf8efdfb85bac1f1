import numpy as np
import pytest

from noisefleet.errors import AnalysisError
from noisefleet.forest import RfHyper, rf_evaluate, rf_train


def separable_dataset(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 6))
    y = (x[:, 2] > 0).astype(int)
    x[:, 2] += np.where(y == 1, 3.0, -3.0)  # wide margin on feature 2
    return x, y


SMALL = RfHyper(n_trees=50)


class TestRandomForest:
    def test_perfectly_separable_scores_100(self):
        x, y = separable_dataset()
        model = rf_train(x[:300], y[:300], SMALL, seed=1)
        report = rf_evaluate(model, x[300:], y[300:])
        assert report.accuracy == 1.0
        for metrics in report.per_class.values():
            assert metrics.precision == 1.0
            assert metrics.recall == 1.0

    def test_random_labels_score_near_half(self):
        rng = np.random.default_rng(2)
        accs = []
        for seed in range(10):
            x = rng.standard_normal((600, 5))
            y = rng.integers(0, 2, 600)
            model = rf_train(x[:480], y[:480], SMALL, seed=seed)
            accs.append(rf_evaluate(model, x[480:], y[480:]).accuracy)
        assert abs(np.mean(accs) - 0.5) < 0.05

    def test_fixed_seed_deterministic(self):
        x, y = separable_dataset(seed=3)
        a = rf_train(x, y, SMALL, seed=7).predict(x)
        b = rf_train(x, y, SMALL, seed=7).predict(x)
        assert np.array_equal(a, b)

    def test_different_seeds_differ_somewhere(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((300, 5))
        y = rng.integers(0, 2, 300)
        a = rf_train(x, y, RfHyper(n_trees=5), seed=1).predict(x)
        b = rf_train(x, y, RfHyper(n_trees=5), seed=2).predict(x)
        assert not np.array_equal(a, b)

    def test_single_class_rejected(self):
        x = np.zeros((50, 3))
        with pytest.raises(AnalysisError):
            rf_train(x, np.zeros(50), SMALL, seed=0)

    def test_importances_sum_to_100(self):
        x, y = separable_dataset(seed=5)
        model = rf_train(x, y, SMALL, seed=5)
        imp = model.feature_importances_pct()
        assert np.all(imp >= 0.0)
        assert imp.sum() == pytest.approx(100.0, abs=1e-6)
        assert int(np.argmax(imp)) == 2  # the constructed separating feature

    def test_worker_count_does_not_change_results(self):
        x, y = separable_dataset(seed=6)
        a = rf_train(x, y, SMALL, seed=9, n_jobs=1)
        b = rf_train(x, y, SMALL, seed=9, n_jobs=2)
        assert np.array_equal(a.predict(x), b.predict(x))
        assert np.allclose(a.feature_importances_pct(), b.feature_importances_pct())
