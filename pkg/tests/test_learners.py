import json

import numpy as np
import pytest

from biqual.data import Dataset
from biqual.learners import (
    DecisionTree,
    GBTParams,
    GradientBoostedTrees,
    TreeParams,
    fit_decision_tree,
    fit_gbt,
    load_model,
    save_model,
)
from biqual.evalstat import evaluate_kappa


def blob_dataset(n=400, seed=0, spread=0.4):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal([-3, 0], spread, (n // 2, 2)), rng.normal([3, 0], spread, (n // 2, 2))])
    y = np.repeat([0, 1], n // 2)
    return Dataset(X, y, ("a", "b"), 2)


class TestDecisionTree:
    def test_pure_region_single_leaf(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 2))
        tree = DecisionTree().fit(X, np.zeros(30, dtype=int), n_classes=2)
        assert len(tree.leaf_ids()) == 1
        assert np.allclose(tree.predict_proba(X), [[1.0, 0.0]])
        assert tree.flags == ()

    def test_xor_training_accuracy(self):
        X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
        y = np.array([0, 1, 1, 0])
        tree = DecisionTree(TreeParams(max_depth=3)).fit(X, y, n_classes=2)
        assert np.array_equal(tree.predict(X), y)

    def test_unsatisfiable_constraint_flags_single_leaf(self):
        d = blob_dataset(100)
        tree = fit_decision_tree(d, TreeParams(min_leaf_fraction_per_class=0.6))
        assert tree.flags == ("single_leaf",)
        assert len(tree.leaf_ids()) == 1

    def test_min_leaf_constraint_holds_on_every_leaf(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(300, 3))
        y = (X[:, 0] + 0.5 * rng.normal(size=300) > 0).astype(int)
        frac = 0.1
        tree = DecisionTree(TreeParams(min_leaf_fraction_per_class=frac)).fit(X, y, n_classes=2)
        leaves = tree.apply(X)
        totals = np.bincount(y, minlength=2)
        for leaf in np.unique(leaves):
            counts = np.bincount(y[leaves == leaf], minlength=2)
            assert np.all(counts >= frac * totals - 1e-9)

    def test_integer_weights_equal_replication(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(60, 3))
        y = (X[:, 0] > 0).astype(int)
        w = rng.integers(1, 4, 60).astype(float)
        t1 = DecisionTree().fit(X, y, sample_weight=w, n_classes=2)
        rep = np.repeat(np.arange(60), w.astype(int))
        t2 = DecisionTree().fit(X[rep], y[rep], n_classes=2)
        q = rng.normal(size=(40, 3))
        assert np.abs(t1.predict_proba(q) - t2.predict_proba(q)).max() < 1e-6

    def test_probability_simplex(self):
        d = blob_dataset(200, seed=3, spread=2.0)
        tree = fit_decision_tree(d, TreeParams(max_depth=4))
        p = tree.predict_proba(d.features)
        assert np.all(p >= 0)
        assert np.abs(p.sum(axis=1) - 1).max() < 1e-9

    def test_serialization_round_trip(self, tmp_path):
        d = blob_dataset(120, seed=4, spread=1.5)
        tree = fit_decision_tree(d, TreeParams(max_depth=3))
        save_model(tree, tmp_path / "tree.json")
        back = load_model(tmp_path / "tree.json")
        assert np.array_equal(back.predict_proba(d.features), tree.predict_proba(d.features))
        json.loads((tmp_path / "tree.json").read_text())  # self-describing JSON


class TestGradientBoostedTrees:
    def test_separable_blobs_kappa(self):
        d = blob_dataset(400, seed=5)
        train = d.subset(np.arange(0, 400, 2))
        test = d.subset(np.arange(1, 400, 2))
        model = fit_gbt(train, GBTParams(n_rounds=20, max_leaves=8, min_samples_leaf=2.0))
        assert evaluate_kappa(model, test) >= 0.95

    def test_single_nonzero_weight_concentrates(self):
        d = blob_dataset(100, seed=6)
        w = np.zeros(100)
        w[3] = 1.0
        model = fit_gbt(d, GBTParams(n_rounds=5, max_leaves=4, min_samples_leaf=0.0), weights=w)
        proba = model.predict_proba(d.features)
        assert np.all(np.argmax(proba, axis=1) == d.labels[3])

    def test_weight_scale_invariance(self):
        d = blob_dataset(150, seed=7, spread=1.5)
        rng = np.random.default_rng(8)
        w = rng.uniform(0.5, 2.0, 150)
        params = GBTParams(n_rounds=15, max_leaves=8, min_samples_leaf=5.0)
        p1 = fit_gbt(d, params, weights=w).predict_proba(d.features)
        p2 = fit_gbt(d, params, weights=2.0 * w).predict_proba(d.features)
        assert np.abs(p1 - p2).max() < 1e-9
        assert np.array_equal(np.argmax(p1, axis=1), np.argmax(p2, axis=1))

    def test_integer_weights_equal_replication(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(80, 3))
        y = (X[:, 0] + X[:, 1] > 0).astype(int)
        w = rng.integers(1, 4, 80).astype(float)
        params = GBTParams(n_rounds=15, max_leaves=8, min_samples_leaf=0.0)
        m1 = GradientBoostedTrees(params).fit(X, y, sample_weight=w, n_classes=2)
        rep = np.repeat(np.arange(80), w.astype(int))
        m2 = GradientBoostedTrees(params).fit(X[rep], y[rep], n_classes=2)
        q = rng.normal(size=(60, 3))
        assert np.abs(m1.predict_proba(q) - m2.predict_proba(q)).max() < 1e-6

    def test_training_loss_nonincreasing(self):
        d = blob_dataset(300, seed=10, spread=2.5)
        model = fit_gbt(d, GBTParams(n_rounds=40, max_leaves=8, min_samples_leaf=5.0))
        curve = np.asarray(model.train_loss_curve_)
        assert curve.size == 41
        assert np.all(np.diff(curve) <= 1e-12)

    def test_probability_simplex_multiclass(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(200, 4))
        y = rng.integers(0, 4, 200)
        model = GradientBoostedTrees(GBTParams(n_rounds=10, max_leaves=6,
                                               min_samples_leaf=2.0)).fit(X, y, n_classes=4)
        p = model.predict_proba(rng.normal(size=(50, 4)))
        assert np.all(p >= 0)
        assert np.abs(p.sum(axis=1) - 1).max() < 1e-9

    def test_deterministic_after_fit(self):
        d = blob_dataset(100, seed=12)
        model = fit_gbt(d, GBTParams(n_rounds=5, max_leaves=4, min_samples_leaf=2.0))
        assert np.array_equal(model.predict_proba(d.features), model.predict_proba(d.features))

    def test_serialization_round_trip(self, tmp_path):
        d = blob_dataset(100, seed=13, spread=1.5)
        model = fit_gbt(d, GBTParams(n_rounds=5, max_leaves=4, min_samples_leaf=2.0))
        save_model(model, tmp_path / "gbt.json")
        back = load_model(tmp_path / "gbt.json")
        assert np.abs(back.predict_proba(d.features) - model.predict_proba(d.features)).max() < 1e-12

    def test_param_validation(self):
        with pytest.raises(ValueError):
            GBTParams(n_rounds=0)
        with pytest.raises(ValueError):
            GBTParams(learning_rate=0.0)
        with pytest.raises(ValueError):
            GBTParams(max_bins=1)
