"""Train/evaluate protocol for the downtime predictor.

Splits are stratified at the window-instance level (never by raw row), the
scaler is fit on one side only (train by default), and each of the N trials
reshuffles the split. Reports carry per-trial and aggregate accuracy,
per-class precision/recall at row and instance granularity, Gini feature
importances normalized to 100%, per-feature z-tests, and a split manifest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import AnalysisError, SplitOverlapError
from .forest import RfHyper, rf_evaluate, rf_train
from .lda import lda_fit, lda_transform
from .node import TELEMETRY_FIELDS
from .stats import mean_comparison_ztest, standardize_apply, standardize_fit

LABELS = ("stable", "prefail")  # class 0, class 1
TEST_FRACTION = 0.2


def split_instances(instance_labels: pd.Series, rng: np.random.Generator,
                    test_fraction: float = TEST_FRACTION) -> tuple[list[str], list[str]]:
    """Stratified instance-level split: per class, a seeded shuffle with the
    first 80% to train."""
    train: list[str] = []
    test: list[str] = []
    for label in LABELS:
        ids = instance_labels.index[instance_labels == label].to_numpy()
        ids = ids[np.argsort(ids)]
        rng.shuffle(ids)
        n_test = int(round(len(ids) * test_fraction))
        test.extend(ids[:n_test])
        train.extend(ids[n_test:])
    return sorted(train), sorted(test)


def guard_disjoint(train_ids, test_ids) -> None:
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise SplitOverlapError(
            f"{len(overlap)} instance(s) in both splits, e.g. {sorted(overlap)[:3]}"
        )


@dataclass(frozen=True)
class Dataset:
    instances: pd.DataFrame  # instance_id, sensor_id, label, t0
    rows: pd.DataFrame  # instance_id + TELEMETRY_FIELDS

    def __post_init__(self):
        missing = {"instance_id", "label"} - set(self.instances.columns)
        if missing:
            raise AnalysisError(f"instances frame lacks columns {sorted(missing)}")

    def labels_by_instance(self) -> pd.Series:
        return self.instances.set_index("instance_id")["label"]

    def matrices_for(self, instance_ids) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(X rows, y row labels, row instance ids) for the given instances."""
        wanted = self.rows[self.rows["instance_id"].isin(set(instance_ids))]
        labels = self.labels_by_instance()
        y = labels.loc[wanted["instance_id"]].to_numpy()
        x = wanted[list(TELEMETRY_FIELDS)].to_numpy(dtype=float)
        return x, (y == "prefail").astype(int), wanted["instance_id"].to_numpy()


def feature_ztests(dataset: Dataset) -> dict[str, dict[str, float]]:
    """Per-feature prefail-vs-stable mean-comparison z-tests over all rows."""
    labels = dataset.labels_by_instance()
    row_labels = labels.loc[dataset.rows["instance_id"]].to_numpy()
    out = {}
    for feature in TELEMETRY_FIELDS:
        values = dataset.rows[feature].to_numpy(dtype=float)
        a = values[row_labels == "prefail"]
        b = values[row_labels == "stable"]
        try:
            result = mean_comparison_ztest(a, b)
            out[feature] = {"z": result.z, "p_two_sided": result.p_two_sided}
        except AnalysisError as exc:
            out[feature] = {"error": str(exc)}
    return out


def lda_summary(dataset: Dataset, max_export_rows: int = 20_000,
                seed: int = 0) -> tuple[dict, pd.DataFrame]:
    """Fit the 2-component discriminant on standardized rows; returns class
    stats on component 1 plus a (sampled) projection table for plotting."""
    labels = dataset.labels_by_instance()
    row_labels = labels.loc[dataset.rows["instance_id"]].to_numpy()
    x = dataset.rows[list(TELEMETRY_FIELDS)].to_numpy(dtype=float)
    y = (row_labels == "prefail").astype(int)
    scaler = standardize_fit(x)
    xs = standardize_apply(scaler, x)
    model = lda_fit(xs, y, n_components=2)
    proj = lda_transform(model, xs)
    stats = {}
    for value, name in ((0, "stable"), (1, "prefail")):
        comp1 = proj[y == value, 0]
        stats[name] = {
            "component1_mean": float(comp1.mean()) if comp1.size else float("nan"),
            "component1_std": float(comp1.std()) if comp1.size else float("nan"),
            "rows": int(comp1.size),
        }
    frame = pd.DataFrame(
        {
            "component_1": proj[:, 0],
            "component_2": proj[:, 1],
            "label": row_labels,
        }
    )
    if len(frame) > max_export_rows:
        frame = frame.sample(n=max_export_rows, random_state=seed).sort_index()
    return stats, frame.reset_index(drop=True)


def _instance_votes(pred: np.ndarray, row_instances: np.ndarray,
                    labels: pd.Series) -> tuple[int, int, dict[str, dict[str, float]], float]:
    """Majority vote per instance; ties go to prefail (recall-first)."""
    frame = pd.DataFrame({"instance_id": row_instances, "pred": pred})
    votes = frame.groupby("instance_id")["pred"].mean()
    inst_pred = (votes >= 0.5).astype(int)
    truth = (labels.loc[inst_pred.index] == "prefail").astype(int)
    accuracy = float((inst_pred == truth).mean())
    per_class = {}
    for value, name in ((0, "stable"), (1, "prefail")):
        tp = int(((inst_pred == value) & (truth == value)).sum())
        fp = int(((inst_pred == value) & (truth != value)).sum())
        fn = int(((inst_pred != value) & (truth == value)).sum())
        per_class[name] = {
            "precision": tp / (tp + fp) if tp + fp else 0.0,
            "recall": tp / (tp + fn) if tp + fn else 0.0,
            "support": int((truth == value).sum()),
        }
    return int(inst_pred.sum()), int(truth.sum()), per_class, accuracy


def _five_number(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=float)
    return {
        "min": float(arr.min()),
        "q1": float(np.percentile(arr, 25)),
        "median": float(np.median(arr)),
        "q3": float(np.percentile(arr, 75)),
        "max": float(arr.max()),
        "mean": float(arr.mean()),
    }


def run_experiment(
    dataset: Dataset,
    trials: int = 10,
    seed: int = 0,
    hyper: RfHyper = RfHyper(),
    scaler_fit: str = "train",
    n_jobs: int = 1,
) -> dict:
    """The full protocol: ``trials`` randomized stratified instance splits,
    scaling, forest training, and evaluation, aggregated into one report."""
    if scaler_fit not in ("train", "test"):
        raise AnalysisError(f"scaler_fit must be 'train' or 'test', got {scaler_fit!r}")
    labels = dataset.labels_by_instance()
    class_counts = labels.value_counts()
    if len(class_counts) < 2:
        raise AnalysisError("dataset holds a single class; cannot train")

    trial_reports = []
    importances = []
    accuracies, inst_accuracies = [], []
    per_class_acc: dict[str, dict[str, list[float]]] = {
        name: {"precision": [], "recall": []} for name in LABELS
    }
    split_manifest = []

    for trial in range(trials):
        trial_seed = seed * 10_000 + trial
        rng = np.random.default_rng(trial_seed)
        train_ids, test_ids = split_instances(labels, rng)
        guard_disjoint(train_ids, test_ids)
        x_train, y_train, _ = dataset.matrices_for(train_ids)
        x_test, y_test, test_row_inst = dataset.matrices_for(test_ids)
        if x_train.size == 0 or x_test.size == 0:
            raise AnalysisError("a split came out empty; dataset too small for trials")

        scaler = standardize_fit(x_train if scaler_fit == "train" else x_test)
        x_train_s = standardize_apply(scaler, x_train)
        x_test_s = standardize_apply(scaler, x_test)

        model = rf_train(x_train_s, y_train, hyper, seed=trial_seed, n_jobs=n_jobs)
        report = rf_evaluate(model, x_test_s, y_test)
        pred = model.predict(x_test_s)
        _, _, inst_per_class, inst_acc = _instance_votes(pred, test_row_inst, labels)

        importances.append(model.feature_importances_pct())
        accuracies.append(report.accuracy)
        inst_accuracies.append(inst_acc)
        per_trial_classes = {}
        for value, name in ((0, "stable"), (1, "prefail")):
            metrics = report.per_class[value]
            per_class_acc[name]["precision"].append(metrics.precision)
            per_class_acc[name]["recall"].append(metrics.recall)
            per_trial_classes[name] = {
                "precision": metrics.precision,
                "recall": metrics.recall,
                "support_rows": metrics.support,
                "instance": inst_per_class[name],
            }
        trial_reports.append(
            {
                "trial": trial,
                "seed": trial_seed,
                "accuracy_rows": report.accuracy,
                "accuracy_instances": inst_acc,
                "classes": per_trial_classes,
            }
        )
        split_manifest.append(
            {
                "trial": trial,
                "train": _split_counts(labels, train_ids, dataset),
                "test": _split_counts(labels, test_ids, dataset),
            }
        )

    mean_importance = np.mean(importances, axis=0)
    mean_importance = mean_importance / mean_importance.sum() * 100.0
    return {
        "trials": trial_reports,
        "aggregate": {
            "accuracy_rows": _five_number(accuracies),
            "accuracy_instances": _five_number(inst_accuracies),
            "per_class": {
                name: {
                    "precision": _five_number(per_class_acc[name]["precision"]),
                    "recall": _five_number(per_class_acc[name]["recall"]),
                }
                for name in LABELS
            },
            "mean_precision_pct": float(
                np.mean([np.mean(per_class_acc[n]["precision"]) for n in LABELS]) * 100
            ),
            "mean_recall_pct": float(
                np.mean([np.mean(per_class_acc[n]["recall"]) for n in LABELS]) * 100
            ),
        },
        "feature_importances_pct": {
            feature: float(v) for feature, v in zip(TELEMETRY_FIELDS, mean_importance)
        },
        "split_manifest": split_manifest,
        "config": {
            "trials": trials,
            "seed": seed,
            "n_trees": hyper.n_trees,
            "features_per_split": hyper.features_per_split,
            "min_leaf": hyper.min_leaf,
            "scaler_fit": scaler_fit,
            "test_fraction": TEST_FRACTION,
        },
        "dataset": {
            "instances": int(len(labels)),
            "rows": int(len(dataset.rows)),
            "per_class_instances": {k: int(v) for k, v in class_counts.items()},
        },
    }


def _split_counts(labels: pd.Series, ids: list[str], dataset: Dataset) -> dict:
    ids = list(ids)
    sub = labels.loc[ids]
    rows = dataset.rows[dataset.rows["instance_id"].isin(set(ids))]
    row_labels = labels.loc[rows["instance_id"]].to_numpy()
    return {
        "instances": int(len(ids)),
        "rows": int(len(rows)),
        "per_class": {
            name: {
                "instances": int((sub == name).sum()),
                "rows": int((row_labels == name).sum()),
            }
            for name in LABELS
        },
    }
