"""Two-sample mean-comparison z-test and the unit-variance scaler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError

MIN_SAMPLES_FOR_Z = 30


@dataclass(frozen=True)
class ZTestResult:
    z: float
    p_two_sided: float


def mean_comparison_ztest(sample_a, sample_b) -> ZTestResult:
    """z = (mean_a - mean_b) / sqrt(var_a/n_a + var_b/n_b), p two-sided from
    the standard normal. Refuses samples below n=30 where the normal
    approximation is unjustified; sample variances use ddof=1.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < MIN_SAMPLES_FOR_Z or b.size < MIN_SAMPLES_FOR_Z:
        raise AnalysisError(
            f"z-test needs n >= {MIN_SAMPLES_FOR_Z} per sample, got {a.size} and {b.size}"
        )
    se2 = a.var(ddof=1) / a.size + b.var(ddof=1) / b.size
    if se2 <= 0.0:
        raise AnalysisError("zero pooled variance; z undefined")
    z = float((a.mean() - b.mean()) / math.sqrt(se2))
    p = float(math.erfc(abs(z) / math.sqrt(2.0)))
    return ZTestResult(z=z, p_two_sided=p)


@dataclass(frozen=True)
class Scaler:
    """Per-feature (x - mean) / std; zero-variance features map to 0."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, rows) -> np.ndarray:
        x = np.asarray(rows, dtype=float)
        return (x - self.mean) / self.scale


def standardize_fit(rows) -> Scaler:
    x = np.asarray(rows, dtype=float)
    if x.size == 0:
        raise AnalysisError("cannot fit a scaler on an empty set")
    if x.ndim != 2:
        x = np.atleast_2d(x)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std == 0.0, 1.0, std)
    return Scaler(mean=mean, scale=scale)


def standardize_apply(scaler: Scaler, rows) -> np.ndarray:
    return scaler.apply(rows)
