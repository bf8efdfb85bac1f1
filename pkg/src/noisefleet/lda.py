"""Fisher linear discriminant projection for class-separation plots.

For the two-class case a single Fisher discriminant exists, so the second
plotting component is the leading eigenvector of the total scatter matrix,
orthogonalized against component 1. Component vectors are unit norm; the
Fisher criterion (between-class over within-class scatter along a direction)
is the figure of merit tests check against random projections.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError

_RIDGE = 1e-6


@dataclass(frozen=True)
class LdaModel:
    components: np.ndarray  # (d, k), unit-norm columns
    overall_mean: np.ndarray
    eigenvalues: np.ndarray
    classes: np.ndarray


def _scatter_matrices(x: np.ndarray, y: np.ndarray, classes: np.ndarray):
    d = x.shape[1]
    overall = x.mean(axis=0)
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for cls in classes:
        grp = x[y == cls]
        mu = grp.mean(axis=0)
        centered = grp - mu
        sw += centered.T @ centered
        delta = (mu - overall).reshape(-1, 1)
        sb += grp.shape[0] * (delta @ delta.T)
    return sw, sb, overall


def fisher_criterion(x, y, direction) -> float:
    """(w' Sb w) / (w' Sw w) along a direction; scale-invariant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    w = np.asarray(direction, dtype=float)
    sw, sb, _ = _scatter_matrices(x, y, np.unique(y))
    denom = float(w @ sw @ w)
    if denom <= 0.0:
        return float("inf")
    return float(w @ sb @ w) / denom


def lda_fit(x, y, n_components: int = 2) -> LdaModel:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size < 2:
        raise AnalysisError("LDA needs at least two classes")
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise AnalysisError("X must be (n, d) with one label per row")
    sw, sb, overall = _scatter_matrices(x, y, classes)

    try:
        sw_inv_sb = np.linalg.solve(sw, sb)
    except np.linalg.LinAlgError:
        warnings.warn("within-class scatter singular; regularizing with ridge")
        sw_inv_sb = np.linalg.solve(sw + _RIDGE * np.eye(sw.shape[0]), sb)
    eigvals, eigvecs = np.linalg.eig(sw_inv_sb)
    order = np.argsort(eigvals.real)[::-1]
    eigvals = eigvals.real[order]
    eigvecs = eigvecs.real[:, order]

    # Rank of Sb is classes-1: that many discriminants exist. Pad the rest
    # with total-scatter eigenvectors orthogonalized against what we have.
    n_disc = min(classes.size - 1, n_components)
    comps = []
    for i in range(n_disc):
        v = eigvecs[:, i]
        comps.append(v / np.linalg.norm(v))
    if len(comps) < n_components:
        centered = x - overall
        st = centered.T @ centered
        _, st_vecs = np.linalg.eigh(st)
        for idx in range(st_vecs.shape[1] - 1, -1, -1):
            if len(comps) == n_components:
                break
            v = st_vecs[:, idx].copy()
            for c in comps:
                v -= (v @ c) * c
            norm = np.linalg.norm(v)
            if norm > 1e-9:
                comps.append(v / norm)
    if len(comps) < n_components:
        raise AnalysisError("could not build the requested number of components")
    components = np.column_stack(comps[:n_components])
    return LdaModel(
        components=components,
        overall_mean=overall,
        eigenvalues=eigvals[:n_components],
        classes=classes,
    )


def lda_transform(model: LdaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x - model.overall_mean) @ model.components
