"""Histogram-based gradient boosted trees for multiclass probability estimation."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .base import ProbabilisticModel

__all__ = ["GBTParams", "GradientBoostedTrees", "fit_gbt"]

_HESSIAN_FLOOR = 1e-6
_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GBTParams:
    """Boosting configuration; defaults follow the usual histogram-GBT settings."""

    n_rounds: int = 100
    learning_rate: float = 0.1
    max_bins: int = 255
    max_depth: Optional[int] = None
    max_leaves: int = 31
    min_samples_leaf: float = 20.0

    def __post_init__(self) -> None:
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be at least 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 2 <= self.max_bins <= 255:
            raise ValueError("max_bins must lie in [2, 255]")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be at least 2")


def _weighted_bin_edges(values: np.ndarray, weights: np.ndarray, max_bins: int) -> np.ndarray:
    """Cut points at (approximately) even weighted quantiles between distinct values."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    uvals, start = np.unique(v, return_index=True)
    if uvals.size <= 1:
        return np.empty(0)
    if uvals.size <= max_bins:
        return 0.5 * (uvals[:-1] + uvals[1:])
    uw = np.add.reduceat(w, start)
    cw = np.cumsum(uw)
    targets = cw[-1] * np.arange(1, max_bins) / max_bins
    cut = np.searchsorted(cw, targets, side="left")
    cut = np.unique(np.clip(cut, 0, uvals.size - 2))
    return 0.5 * (uvals[cut] + uvals[cut + 1])


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class _HistTree:
    """One regression tree over pre-binned features, stored as parallel arrays."""

    __slots__ = ("feature", "split_bin", "left", "right", "value")

    def __init__(self, feature, split_bin, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.split_bin = np.asarray(split_bin, dtype=np.int32)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    def route(self, binned: np.ndarray) -> np.ndarray:
        node = np.zeros(binned.shape[0], dtype=np.int64)
        while True:
            internal = self.feature[node] >= 0
            if not np.any(internal):
                return self.value[node]
            idx = np.flatnonzero(internal)
            f = self.feature[node[idx]]
            go_left = binned[idx, f] <= self.split_bin[node[idx]]
            node[idx[go_left]] = self.left[node[idx[go_left]]]
            node[idx[~go_left]] = self.right[node[idx[~go_left]]]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "split_bin": self.split_bin.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "_HistTree":
        return cls(payload["feature"], payload["split_bin"], payload["left"],
                   payload["right"], payload["value"])


class _Grower:
    """Leaf-wise best-first growth of a single histogram tree."""

    def __init__(self, binned, g, h, w, params: GBTParams, n_bins: np.ndarray):
        self.binned = binned
        self.g = g
        self.h = h
        self.w = w
        self.params = params
        self.d = binned.shape[1]
        self.B = params.max_bins
        self.n_bins = n_bins  # bins actually used per feature
        self._flat_offset = (np.arange(self.d, dtype=np.int64) * self.B)[None, :]
        # positions after the last used bin of a feature can never split
        self._split_ok = np.arange(self.B)[None, :] < (n_bins[:, None] - 1)

    def _histogram(self, rows: np.ndarray) -> np.ndarray:
        codes = (self.binned[rows].astype(np.int64) + self._flat_offset).ravel()
        size = self.d * self.B
        out = np.empty((3, self.d, self.B))
        for i, stat in enumerate((self.g, self.h, self.w)):
            out[i] = np.bincount(codes, weights=np.repeat(stat[rows], self.d), minlength=size).reshape(
                self.d, self.B
            )
        return out

    def _best_split(self, hist: np.ndarray):
        G, H, W = hist
        g_tot = G[0].sum()
        h_tot = H[0].sum()
        gl = np.cumsum(G, axis=1)
        hl = np.cumsum(H, axis=1)
        wl = np.cumsum(W, axis=1)
        gr = g_tot - gl
        hr = h_tot - hl
        wr = wl[0, -1] - wl
        valid = self._split_ok & (wl >= self.params.min_samples_leaf) & (wr >= self.params.min_samples_leaf)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = gl * gl / hl + gr * gr / hr
        gain = np.nan_to_num(gain, nan=-np.inf, posinf=-np.inf, neginf=-np.inf)
        gain = gain - (g_tot * g_tot / h_tot if h_tot > 0 else 0.0)
        gain[~valid] = -np.inf
        flat_gain = gain.ravel()
        best = float(flat_gain[int(np.argmax(flat_gain))])
        if best <= _GAIN_EPS:
            return None
        # first candidate within relative tolerance of the maximum, so float
        # noise from different summation orders cannot flip near-ties
        flat = int(np.flatnonzero(flat_gain >= best - 1e-9 * abs(best))[0])
        return best, flat // self.B, flat % self.B

    def grow(self) -> tuple[_HistTree, np.ndarray]:
        n = self.binned.shape[0]
        feature = [-1]
        split_bin = [0]
        left = [-1]
        right = [-1]
        value = [0.0]
        leaf_rows: dict[int, np.ndarray] = {}

        rows0 = np.arange(n)
        hist0 = self._histogram(rows0)
        heap: list = []
        counter = 0

        def consider(node: int, rows: np.ndarray, hist: np.ndarray, depth: int) -> None:
            nonlocal counter
            leaf_rows[node] = rows
            h_sum = hist[1].sum()
            value[node] = -hist[0].sum() / h_sum if h_sum > 0 else 0.0
            if self.params.max_depth is not None and depth >= self.params.max_depth:
                return
            split = self._best_split(hist)
            if split is not None:
                heapq.heappush(heap, (-split[0], counter, node, rows, hist, depth, split[1], split[2]))
                counter += 1

        consider(0, rows0, hist0, 0)
        n_leaves = 1
        while heap and n_leaves < self.params.max_leaves:
            _, _, node, rows, hist, depth, f, b = heapq.heappop(heap)
            go_left = self.binned[rows, f] <= b
            rows_l, rows_r = rows[go_left], rows[~go_left]
            # build the smaller child's histogram, derive the sibling by subtraction
            if rows_l.size <= rows_r.size:
                hist_l = self._histogram(rows_l)
                hist_r = hist - hist_l
            else:
                hist_r = self._histogram(rows_r)
                hist_l = hist - hist_r
            del leaf_rows[node]
            feature[node] = f
            split_bin[node] = b
            left[node] = len(feature)
            feature.append(-1); split_bin.append(0); left.append(-1); right.append(-1); value.append(0.0)
            right[node] = len(feature)
            feature.append(-1); split_bin.append(0); left.append(-1); right.append(-1); value.append(0.0)
            consider(left[node], rows_l, hist_l, depth + 1)
            consider(right[node], rows_r, hist_r, depth + 1)
            n_leaves += 1

        lr = self.params.learning_rate
        values = np.asarray(value) * lr
        row_values = np.zeros(n)
        for node, rows in leaf_rows.items():
            row_values[rows] = values[node]
        tree = _HistTree(feature, split_bin, left, right, values)
        return tree, row_values


class GradientBoostedTrees(ProbabilisticModel):
    """Multiclass boosting: one regression tree per class per round on softmax gradients.

    Sample weights are normalized to mean 1 internally, so rescaling all
    weights by a common factor leaves the fitted model unchanged;
    ``min_samples_leaf`` counts normalized weighted mass.
    """

    def __init__(self, params: GBTParams = GBTParams()):
        self.params = params
        self.flags = ()

    def fit(self, features, labels, sample_weight=None, n_classes=None):
        X = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        n, d = X.shape
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0):
            raise ValueError("sample weights must be nonnegative and aligned")
        if w.sum() <= 0:
            raise ValueError("sample weights must not all be zero")
        w = w * (n / w.sum())
        K = int(n_classes) if n_classes is not None else int(y.max()) + 1
        self.n_classes_ = K

        self.bin_edges_ = [_weighted_bin_edges(X[:, f], w, self.params.max_bins) for f in range(d)]
        binned = self._bin(X)
        n_bins = np.asarray([e.size + 1 for e in self.bin_edges_], dtype=np.int64)

        prior = np.bincount(y, weights=w, minlength=K) / w.sum()
        self.baseline_ = np.log(np.clip(prior, 1e-12, None))
        F = np.tile(self.baseline_, (n, 1))

        onehot = np.zeros((n, K))
        onehot[np.arange(n), y] = 1.0
        wcol = w[:, None]

        self.trees_: list[list[_HistTree]] = []
        self.train_loss_curve_ = []
        for _ in range(self.params.n_rounds):
            proba = _softmax(F)
            self.train_loss_curve_.append(self._loss(proba, onehot, w))
            grad = (proba - onehot) * wcol
            hess = np.maximum(proba * (1.0 - proba), _HESSIAN_FLOOR) * wcol
            round_trees = []
            for k in range(K):
                grower = _Grower(binned, grad[:, k], hess[:, k], w, self.params, n_bins)
                tree, row_values = grower.grow()
                F[:, k] += row_values
                round_trees.append(tree)
            self.trees_.append(round_trees)
        self.train_loss_curve_.append(self._loss(_softmax(F), onehot, w))
        return self

    @staticmethod
    def _loss(proba: np.ndarray, onehot: np.ndarray, w: np.ndarray) -> float:
        p_true = np.clip((proba * onehot).sum(axis=1), 1e-300, None)
        return float(-(w * np.log(p_true)).sum() / w.sum())

    def _bin(self, X: np.ndarray) -> np.ndarray:
        binned = np.empty(X.shape, dtype=np.uint8)
        for f, edges in enumerate(self.bin_edges_):
            binned[:, f] = np.searchsorted(edges, X[:, f], side="right")
        return binned

    def decision_scores(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        binned = self._bin(X)
        F = np.tile(self.baseline_, (X.shape[0], 1))
        for round_trees in self.trees_:
            for k, tree in enumerate(round_trees):
                F[:, k] += tree.route(binned)
        return F

    def predict_proba(self, features) -> np.ndarray:
        return _softmax(self.decision_scores(features))

    def to_dict(self) -> dict:
        return {
            "kind": "gradient-boosted-trees",
            "n_classes": self.n_classes_,
            "params": {
                "n_rounds": self.params.n_rounds,
                "learning_rate": self.params.learning_rate,
                "max_bins": self.params.max_bins,
                "max_depth": self.params.max_depth,
                "max_leaves": self.params.max_leaves,
                "min_samples_leaf": self.params.min_samples_leaf,
            },
            "flags": list(self.flags),
            "baseline": self.baseline_.tolist(),
            "bin_edges": [e.tolist() for e in self.bin_edges_],
            "trees": [[t.to_dict() for t in round_trees] for round_trees in self.trees_],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GradientBoostedTrees":
        model = cls(GBTParams(**payload["params"]))
        model.n_classes_ = payload["n_classes"]
        model.flags = tuple(payload["flags"])
        model.baseline_ = np.asarray(payload["baseline"])
        model.bin_edges_ = [np.asarray(e) for e in payload["bin_edges"]]
        model.trees_ = [[_HistTree.from_dict(t) for t in rt] for rt in payload["trees"]]
        return model


def fit_gbt(dataset, params: GBTParams = GBTParams(), weights=None) -> GradientBoostedTrees:
    """Fit a GradientBoostedTrees model on a Dataset (weights optional)."""
    values = None if weights is None else getattr(weights, "values", weights)
    return GradientBoostedTrees(params).fit(
        dataset.features, dataset.labels, sample_weight=values, n_classes=dataset.n_classes
    )
