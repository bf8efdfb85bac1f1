"""Random-forest training and evaluation behind a stable, seeded contract.

Bagged CART trees with Gini impurity, sqrt(d) candidate features per split,
and single-row leaves; scikit-learn supplies the tree machinery. A fixed seed
fully determines the model, its predictions, and its Gini importances
(normalized to sum to 100%), independent of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .errors import AnalysisError


@dataclass(frozen=True)
class RfHyper:
    n_trees: int = 1000
    features_per_split: str = "sqrt"
    min_leaf: int = 1
    max_depth: int | None = None


@dataclass
class RfModel:
    classifier: RandomForestClassifier
    classes: np.ndarray
    seed: int

    def predict(self, rows) -> np.ndarray:
        return self.classifier.predict(np.asarray(rows, dtype=float))

    def feature_importances_pct(self) -> np.ndarray:
        imp = self.classifier.feature_importances_.copy()
        total = imp.sum()
        if total <= 0.0:
            return np.full(imp.size, 100.0 / imp.size)
        return imp / total * 100.0


def rf_train(train_rows, labels, hyper: RfHyper = RfHyper(), seed: int = 0,
             n_jobs: int = 1) -> RfModel:
    x = np.asarray(train_rows, dtype=float)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise AnalysisError("training set holds a single class")
    clf = RandomForestClassifier(
        n_estimators=hyper.n_trees,
        criterion="gini",
        max_features=hyper.features_per_split,
        min_samples_leaf=hyper.min_leaf,
        max_depth=hyper.max_depth,
        bootstrap=True,
        random_state=int(seed) % (2**32),
        n_jobs=n_jobs,
    )
    clf.fit(x, y)
    return RfModel(classifier=clf, classes=classes, seed=seed)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    support: int


@dataclass(frozen=True)
class ClassReport:
    accuracy: float
    per_class: dict
    confusion: dict

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {
                str(k): {"precision": v.precision, "recall": v.recall, "support": v.support}
                for k, v in self.per_class.items()
            },
        }


def rf_evaluate(model: RfModel, test_rows, test_labels) -> ClassReport:
    x = np.asarray(test_rows, dtype=float)
    y = np.asarray(test_labels)
    pred = model.predict(x)
    accuracy = float(np.mean(pred == y))
    per_class = {}
    confusion = {}
    for cls in model.classes:
        tp = int(np.sum((pred == cls) & (y == cls)))
        fp = int(np.sum((pred == cls) & (y != cls)))
        fn = int(np.sum((pred != cls) & (y == cls)))
        per_class[cls] = ClassMetrics(
            precision=tp / (tp + fp) if tp + fp else 0.0,
            recall=tp / (tp + fn) if tp + fn else 0.0,
            support=int(np.sum(y == cls)),
        )
        confusion[cls] = {"tp": tp, "fp": fp, "fn": fn}
    return ClassReport(accuracy=accuracy, per_class=per_class, confusion=confusion)
