import math

import numpy as np
import pytest

from noisefleet.errors import AnalysisError
from noisefleet.stats import (
    mean_comparison_ztest,
    standardize_apply,
    standardize_fit,
)


def exact_standard_sample(n, seed):
    """Sample with mean exactly 0 and ddof=1 variance exactly 1."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x = x - x.mean()
    return x / x.std(ddof=1)


class TestZTest:
    def test_identical_samples(self):
        x = np.arange(100, dtype=float)
        result = mean_comparison_ztest(x, x.copy())
        assert result.z == 0.0
        assert result.p_two_sided == pytest.approx(1.0)

    def test_constructed_100k_case(self):
        # means 0 vs 0.1 with unit variances: z = -0.1 / sqrt(2e-5)
        a = exact_standard_sample(100_000, 1)
        b = exact_standard_sample(100_000, 2) + 0.1
        result = mean_comparison_ztest(a, b)
        assert result.z == pytest.approx(-0.1 / math.sqrt(2e-5), abs=0.01)
        assert result.p_two_sided < 1e-10

    def test_matches_closed_form(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.normal(rng.uniform(-2, 2), rng.uniform(0.5, 3), int(rng.integers(30, 500)))
            b = rng.normal(rng.uniform(-2, 2), rng.uniform(0.5, 3), int(rng.integers(30, 500)))
            expected = (a.mean() - b.mean()) / math.sqrt(
                a.var(ddof=1) / a.size + b.var(ddof=1) / b.size
            )
            assert mean_comparison_ztest(a, b).z == pytest.approx(expected, abs=1e-9)

    def test_refuses_small_samples(self):
        with pytest.raises(AnalysisError):
            mean_comparison_ztest(np.zeros(29), np.zeros(100))

    def test_zero_variance_undefined(self):
        with pytest.raises(AnalysisError):
            mean_comparison_ztest(np.ones(50), np.ones(50))


class TestScaler:
    def test_fit_apply_standardizes(self):
        rng = np.random.default_rng(5)
        x = rng.normal(3.0, 2.5, (500, 4))
        scaled = standardize_apply(standardize_fit(x), x)
        assert np.allclose(scaled.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(scaled.var(axis=0), 1.0, atol=1e-9)

    def test_constant_feature_maps_to_zero(self):
        x = np.column_stack([np.full(50, 7.0), np.arange(50, dtype=float)])
        scaled = standardize_apply(standardize_fit(x), x)
        assert np.all(scaled[:, 0] == 0.0)

    def test_train_fit_does_not_leak_to_test(self):
        rng = np.random.default_rng(6)
        train = rng.normal(0.0, 1.0, (200, 3))
        test = rng.normal(1.0, 1.0, (200, 3))
        scaler = standardize_fit(train)
        assert np.all(np.abs(standardize_apply(scaler, test).mean(axis=0)) > 0.5)

    def test_empty_fit_rejected(self):
        with pytest.raises(AnalysisError):
            standardize_fit(np.zeros((0, 3)))
