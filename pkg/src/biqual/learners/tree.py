"""Axis-aligned decision tree with a per-class minimum leaf mass constraint."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .base import ProbabilisticModel

__all__ = ["TreeParams", "DecisionTree", "fit_decision_tree"]


@dataclass(frozen=True)
class TreeParams:
    """Tree growth constraints.

    ``min_leaf_fraction_per_class`` requires every leaf to retain at least
    that fraction of each class's total (weighted) mass; 0 disables the
    constraint.  Values above 0.5 make any split infeasible, which yields a
    flagged single-leaf tree.
    """

    min_leaf_fraction_per_class: float = 0.0
    max_depth: Optional[int] = None
    split_criterion: str = "gini"

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_leaf_fraction_per_class <= 1.0:
            raise ValueError("min_leaf_fraction_per_class must lie in [0, 1]")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")
        if self.split_criterion != "gini":
            raise ValueError("only the gini criterion is supported")


def _gini(class_mass: np.ndarray, total: np.ndarray) -> np.ndarray:
    # class_mass: (..., K), total: (...,); impurity 1 - sum (m/W)^2
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = class_mass / total[..., None]
    frac = np.nan_to_num(frac)
    return 1.0 - np.sum(frac * frac, axis=-1)


class DecisionTree(ProbabilisticModel):
    """Binary classification tree; leaves predict weighted class frequencies."""

    def __init__(self, params: TreeParams = TreeParams()):
        self.params = params
        self.flags = ()

    def fit(self, features, labels, sample_weight=None, n_classes=None):
        X = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        n = X.shape[0]
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        if np.any(w < 0) or w.shape != (n,):
            raise ValueError("sample weights must be nonnegative and aligned")
        K = int(n_classes) if n_classes is not None else int(y.max()) + 1
        self.n_classes_ = K

        total_mass = np.bincount(y, weights=w, minlength=K)
        # minimum per-class mass each leaf must keep (classes present at fit time)
        self._min_mass = self.params.min_leaf_fraction_per_class * total_mass
        self._present = total_mass > 0

        self._feature: list[int] = []
        self._threshold: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._value: list[np.ndarray] = []
        self._node_mass: list[np.ndarray] = []

        self._grow(X, y, w, np.arange(n), depth=0)

        flags = []
        root_is_leaf = self._feature[0] < 0
        if root_is_leaf and np.count_nonzero(total_mass > 0) > 1:
            flags.append("single_leaf")
        self.flags = tuple(flags)
        self._freeze()
        return self

    def _new_node(self) -> int:
        self._feature.append(-1)
        self._threshold.append(0.0)
        self._left.append(-1)
        self._right.append(-1)
        self._value.append(np.zeros(self.n_classes_))
        self._node_mass.append(np.zeros(self.n_classes_))
        return len(self._feature) - 1

    def _grow(self, X, y, w, rows, depth) -> int:
        # explicit stack rather than recursion; trees can chain deeply
        root = self._new_node()
        stack = [(root, rows, depth)]
        while stack:
            node, node_rows, node_depth = stack.pop()
            mass = np.bincount(y[node_rows], weights=w[node_rows], minlength=self.n_classes_)
            total = mass.sum()
            self._node_mass[node] = mass
            self._value[node] = (
                mass / total if total > 0 else np.full(self.n_classes_, 1.0 / self.n_classes_)
            )
            if (
                (self.params.max_depth is not None and node_depth >= self.params.max_depth)
                or np.count_nonzero(mass > 0) <= 1
            ):
                continue
            split = self._best_split(X, y, w, node_rows, mass)
            if split is None:
                continue
            feature, threshold = split
            go_left = X[node_rows, feature] <= threshold
            self._feature[node] = feature
            self._threshold[node] = threshold
            left = self._new_node()
            right = self._new_node()
            self._left[node] = left
            self._right[node] = right
            stack.append((right, node_rows[~go_left], node_depth + 1))
            stack.append((left, node_rows[go_left], node_depth + 1))
        return root

    def _best_split(self, X, y, w, rows, node_mass):
        K = self.n_classes_
        total = node_mass.sum()
        parent_impurity = _gini(node_mass[None, :], np.array([total]))[0]
        # zero-gain splits are allowed on impure nodes (XOR-style data only
        # separates after a gainless first cut); recursion still terminates
        # because both children are strictly smaller
        best_gain = -np.inf
        best = None
        onehot_w = np.zeros((rows.size, K))
        onehot_w[np.arange(rows.size), y[rows]] = w[rows]
        for f in range(X.shape[1]):
            values = X[rows, f]
            order = np.argsort(values, kind="stable")
            sv = values[order]
            cum = np.cumsum(onehot_w[order], axis=0)
            boundary = np.flatnonzero(sv[:-1] < sv[1:])
            if boundary.size == 0:
                continue
            left_mass = cum[boundary]
            right_mass = node_mass[None, :] - left_mass
            valid = np.ones(boundary.size, dtype=bool)
            if self.params.min_leaf_fraction_per_class > 0:
                need = self._min_mass[None, self._present]
                valid &= np.all(left_mass[:, self._present] >= need - 1e-12, axis=1)
                valid &= np.all(right_mass[:, self._present] >= need - 1e-12, axis=1)
            if not np.any(valid):
                continue
            wl = left_mass.sum(axis=1)
            wr = total - wl
            gain = parent_impurity - (
                wl * _gini(left_mass, wl) + wr * _gini(right_mass, wr)
            ) / total
            gain[~valid] = -np.inf
            top = float(gain[int(np.argmax(gain))])
            if not np.isfinite(top):
                continue
            # first candidate within relative tolerance of this feature's max;
            # replace the incumbent only on a clear improvement (near-ties keep
            # the earliest candidate regardless of float summation order)
            i = int(np.flatnonzero(gain >= top - 1e-9 * abs(top) - 1e-15)[0])
            if gain[i] > best_gain * (1 + 1e-9) + 1e-15:
                best_gain = float(gain[i])
                cut = boundary[i]
                best = (f, float(0.5 * (sv[cut] + sv[cut + 1])))
        return best

    def _freeze(self) -> None:
        self.feature_ = np.asarray(self._feature, dtype=np.int64)
        self.threshold_ = np.asarray(self._threshold, dtype=np.float64)
        self.left_ = np.asarray(self._left, dtype=np.int64)
        self.right_ = np.asarray(self._right, dtype=np.int64)
        self.value_ = np.vstack(self._value)
        self.node_mass_ = np.vstack(self._node_mass)
        del self._feature, self._threshold, self._left, self._right, self._value, self._node_mass

    def apply(self, features) -> np.ndarray:
        """Leaf node id for every row."""
        X = np.asarray(features, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            internal = self.feature_[node] >= 0
            if not np.any(internal):
                return node
            idx = np.flatnonzero(internal)
            f = self.feature_[node[idx]]
            go_left = X[idx, f] <= self.threshold_[node[idx]]
            node[idx[go_left]] = self.left_[node[idx[go_left]]]
            node[idx[~go_left]] = self.right_[node[idx[~go_left]]]

    def predict_proba(self, features) -> np.ndarray:
        return self.value_[self.apply(features)]

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feature_ < 0)

    def to_dict(self) -> dict:
        def node_dict(i: int) -> dict:
            if self.feature_[i] < 0:
                return {"value": self.value_[i].tolist(), "mass": self.node_mass_[i].tolist()}
            return {
                "feature": int(self.feature_[i]),
                "threshold": float(self.threshold_[i]),
                "left": node_dict(int(self.left_[i])),
                "right": node_dict(int(self.right_[i])),
                "value": self.value_[i].tolist(),
                "mass": self.node_mass_[i].tolist(),
            }

        return {
            "kind": "decision-tree",
            "n_classes": self.n_classes_,
            "params": {
                "min_leaf_fraction_per_class": self.params.min_leaf_fraction_per_class,
                "max_depth": self.params.max_depth,
                "split_criterion": self.params.split_criterion,
            },
            "flags": list(self.flags),
            "root": node_dict(0),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DecisionTree":
        model = cls(TreeParams(**payload["params"]))
        model.n_classes_ = payload["n_classes"]
        model.flags = tuple(payload["flags"])
        feature, threshold, left, right, value, mass = [], [], [], [], [], []

        def build(node: dict) -> int:
            i = len(feature)
            feature.append(node.get("feature", -1))
            threshold.append(node.get("threshold", 0.0))
            left.append(-1)
            right.append(-1)
            value.append(np.asarray(node["value"]))
            mass.append(np.asarray(node["mass"]))
            if "feature" in node:
                left[i] = build(node["left"])
                right[i] = build(node["right"])
            return i

        build(payload["root"])
        model.feature_ = np.asarray(feature, dtype=np.int64)
        model.threshold_ = np.asarray(threshold, dtype=np.float64)
        model.left_ = np.asarray(left, dtype=np.int64)
        model.right_ = np.asarray(right, dtype=np.int64)
        model.value_ = np.vstack(value)
        model.node_mass_ = np.vstack(mass)
        return model


def fit_decision_tree(dataset, params: TreeParams = TreeParams(), weights=None) -> DecisionTree:
    """Fit a DecisionTree on a Dataset (weights optional)."""
    values = None if weights is None else getattr(weights, "values", weights)
    return DecisionTree(params).fit(
        dataset.features, dataset.labels, sample_weight=values, n_classes=dataset.n_classes
    )
