import numpy as np
import pytest

from biqual.data import BiqualityDataset, Dataset, make_two_moons, stratified_split
from biqual.density_ratio import (
    KMMParams,
    WeightVector,
    default_gamma,
    kmm_weights,
    pdr_weights,
    rbf_kernel,
    source_labeled_set,
)
from biqual.evalstat import evaluate_kappa
from biqual.learners import GBTParams, GradientBoostedTrees
from biqual.reweighting import ReweightingMethod, train_with_method
from oracles import TableModel, dataset_from_counts, empirical_table_trainer


class TestRbfKernel:
    def test_same_point_is_one(self):
        assert rbf_kernel([1.0, 2.0], [1.0, 2.0], gamma=0.7) == 1.0

    def test_unit_scaled_distance(self):
        gamma = 0.5
        a = np.zeros(3)
        b = np.array([np.sqrt(1 / gamma), 0.0, 0.0])
        assert abs(rbf_kernel(a, b, gamma) - np.exp(-1.0)) < 1e-12

    def test_default_gamma_four_features(self):
        assert default_gamma(4) == 0.25

    def test_validation(self):
        with pytest.raises(ValueError):
            rbf_kernel([1.0], [1.0, 2.0], 1.0)
        with pytest.raises(ValueError):
            rbf_kernel([1.0], [1.0], 0.0)


class TestWeightVector:
    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            WeightVector(np.array([-1.0]))
        with pytest.raises(ValueError):
            WeightVector(np.array([np.inf]))

    def test_csv_round_trip(self, tmp_path):
        w = WeightVector(np.array([0.0, 1.5, 2.25]))
        w.to_csv(tmp_path / "w.csv")
        back = WeightVector.from_csv(tmp_path / "w.csv")
        assert np.array_equal(back.values, w.values)


class TestPdrWeights:
    def test_uninformative_classifier_gives_unit_weights(self):
        rng = np.random.default_rng(0)
        trusted = Dataset(rng.normal(size=(100, 1)), rng.integers(0, 2, 100), ("x",), 2)
        untrusted = Dataset(rng.normal(size=(900, 1)), rng.integers(0, 2, 900), ("x",), 2)
        biq = BiqualityDataset(trusted, untrusted)
        prior = TableModel({}, 2)
        prior.predict_proba = lambda X: np.tile([0.9, 0.1], (len(X), 1))
        w = pdr_weights(biq, lambda d: prior)
        assert np.abs(w.values - 1.0).max() < 1e-9

    def test_posterior_half_gives_size_ratio(self):
        rng = np.random.default_rng(1)
        trusted = Dataset(rng.normal(size=(100, 1)), rng.integers(0, 2, 100), ("x",), 2)
        untrusted = Dataset(rng.normal(size=(900, 1)), rng.integers(0, 2, 900), ("x",), 2)
        biq = BiqualityDataset(trusted, untrusted)
        half = TableModel({}, 2)
        half.predict_proba = lambda X: np.tile([0.5, 0.5], (len(X), 1))
        w = pdr_weights(biq, lambda d: half)
        assert np.allclose(w.values, 9.0)

    def test_oracle_posterior_recovers_exact_ratio(self):
        # discrete 3-point domain: with the count-exact source posterior the
        # weights equal P_T(x) / P_U(x) exactly
        rng = np.random.default_rng(2)
        c_t = rng.integers(1, 15, size=(3, 2))
        c_u = rng.integers(1, 15, size=(3, 2))
        trusted = dataset_from_counts(c_t, 2)
        untrusted = dataset_from_counts(c_u, 2)
        biq = BiqualityDataset(trusted, untrusted)
        w = pdr_weights(biq, empirical_table_trainer)
        p_t = c_t.sum(axis=1) / c_t.sum()
        p_u = c_u.sum(axis=1) / c_u.sum()
        expected = (p_t / p_u)[untrusted.features[:, 0].astype(int)]
        assert np.abs(w.values - expected).max() < 1e-9

    def test_iid_sanity_weights_and_downstream_kappa(self):
        # T and U drawn iid from the same distribution: weights hover near 1
        # and reweighting does not change the trained model's quality much
        moons = make_two_moons(2000, 0.15, seed=3)
        trusted, untrusted = stratified_split(moons, 0.1, seed=4)
        biq = BiqualityDataset(trusted, untrusted)
        params = GBTParams(n_rounds=20, max_leaves=15, min_samples_leaf=5.0)
        factory = lambda: GradientBoostedTrees(params)
        from biqual.reweighting import calibrated_trainer

        w = pdr_weights(biq, calibrated_trainer(factory, seed=5))
        assert 0.8 <= w.values.mean() <= 1.25
        test = make_two_moons(1000, 0.15, seed=6)
        k_pdr = evaluate_kappa(train_with_method(biq, ReweightingMethod("PDR"), factory, seed=5), test)
        k_none = evaluate_kappa(train_with_method(biq, ReweightingMethod("NoCorrection"), factory, seed=5), test)
        assert abs(k_pdr - k_none) <= 0.02

    def test_source_labeled_set_layout(self):
        rng = np.random.default_rng(7)
        trusted = Dataset(rng.normal(size=(10, 2)), rng.integers(0, 2, 10), ("a", "b"), 2)
        untrusted = Dataset(rng.normal(size=(20, 2)), rng.integers(0, 2, 20), ("a", "b"), 2)
        pool = source_labeled_set(BiqualityDataset(trusted, untrusted))
        assert pool.n_classes == 2
        assert pool.labels[:10].tolist() == [1] * 10
        assert pool.labels[10:].tolist() == [0] * 20


def toy_qp_objective(a, b, B_sum=None):
    """Objective of the 8-point 1-D toy reduced to block sums (a, b).

    U has four points at -1 and four at +1, T has four at +1, gamma = 1.
    Within a block the kernel is exactly 1, across blocks exp(-4), so the
    quadratic form depends only on the block sums.
    """
    cross = np.exp(-4.0)
    quad = 0.5 * (a * a + b * b + 2.0 * a * b * cross)
    kappa_a = 2.0 * 4.0 * cross  # (m / n_T) * sum of kernels to T for -1 rows
    kappa_b = 2.0 * 4.0 * 1.0
    return quad - (kappa_a * a + kappa_b * b)


def toy_qp_oracle(B=5.0, eps=0.01, levels=4):
    """Iterated dense grid search over the (a, b) reduction of the toy QP."""
    lo_s, hi_s = 8.0 * (1 - eps), 8.0 * (1 + eps)
    bound = 4.0 * B
    best = (np.inf, None, None)
    a_lo, a_hi = 0.0, bound
    for _ in range(levels):
        a_grid = np.linspace(a_lo, a_hi, 801)
        for s in np.linspace(lo_s, hi_s, 81):
            a = a_grid[(a_grid >= s - bound) & (a_grid <= np.minimum(bound, s))]
            if a.size == 0:
                continue
            vals = toy_qp_objective(a, s - a)
            i = int(np.argmin(vals))
            if vals[i] < best[0]:
                best = (float(vals[i]), float(a[i]), float(s))
        # zoom around the best point
        width = (a_hi - a_lo) / 40
        a_lo, a_hi = max(0.0, best[1] - width), min(bound, best[1] + width)
    return best[0]


class TestKmmWeights:
    def _toy(self):
        Xu = np.array([[-1.0]] * 4 + [[1.0]] * 4)
        Xt = np.array([[1.0]] * 4)
        return Xt, Xu

    def test_identical_sets_unit_weights(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(50, 3))
        w = kmm_weights(X, X, KMMParams())
        assert np.abs(w.values - 1.0).max() < 1e-3

    def test_toy_upweights_matching_region(self):
        Xt, Xu = self._toy()
        w = kmm_weights(Xt, Xu, KMMParams(gamma=1.0, B=5.0, eps=0.01))
        plus = w.values[4:].mean()
        minus = w.values[:4].mean()
        assert plus >= 3.0 * max(minus, 1e-9)

    def test_toy_objective_matches_grid_oracle(self):
        Xt, Xu = self._toy()
        params = KMMParams(gamma=1.0, B=5.0, eps=0.01)
        w = kmm_weights(Xt, Xu, params)
        beta = w.values
        from biqual.density_ratio import rbf_gram

        K = rbf_gram(Xu, Xu, 1.0)
        kappa = (8 / 4) * rbf_gram(Xu, Xt, 1.0).sum(axis=1)
        obj = 0.5 * beta @ K @ beta - kappa @ beta
        assert abs(obj - toy_qp_oracle()) < 1e-4

    def test_constraints_hold(self):
        Xt, Xu = self._toy()
        for B in (1.0, 5.0):
            w = kmm_weights(Xt, Xu, KMMParams(gamma=1.0, B=B, eps=0.01))
            assert np.all(w.values >= 0.0)
            assert np.all(w.values <= B)
            assert abs(w.values.mean() - 1.0) <= 0.01 + 1e-6

    def test_single_batch_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        Xt = rng.normal(size=(20, 2))
        Xu = rng.normal(1.0, 1.0, size=(30, 2))
        params = KMMParams(batch_size=100)
        w1 = kmm_weights(Xt, Xu, params).values
        perm = rng.permutation(30)
        w2 = kmm_weights(Xt, Xu[perm], params).values
        assert np.abs(w1[perm] - w2).max() < 1e-8

    def test_batched_path_produces_aligned_weights(self):
        rng = np.random.default_rng(10)
        Xt = rng.normal(size=(30, 2))
        Xu = np.vstack([rng.normal(size=(110, 2)), rng.normal(3.0, 1.0, size=(110, 2))])
        w = kmm_weights(Xt, Xu, KMMParams(batch_size=64, seed=1))
        assert len(w) == 220
        # rows matching the trusted cloud should dominate
        assert w.values[:110].mean() > w.values[110:].mean()

    def test_objective_nonincreasing(self):
        # re-run the projected gradient loop manually and track the objective
        rng = np.random.default_rng(11)
        Xt = rng.normal(size=(15, 2))
        Xu = rng.normal(0.5, 1.2, size=(40, 2))
        from biqual.density_ratio import _project_box_slab, rbf_gram

        gamma = default_gamma(2)
        K = rbf_gram(Xu, Xu, gamma)
        kappa = (40 / 15) * rbf_gram(Xu, Xt, gamma).sum(axis=1)
        m = 40
        eps = (np.sqrt(m) - 1) / np.sqrt(m)
        v = np.ones(m) / np.sqrt(m)
        for _ in range(50):
            v = K @ v
            v /= np.linalg.norm(v)
        step = 1.0 / (float(v @ K @ v) * (1 + 1e-6))
        beta = _project_box_slab(np.ones(m), 1000.0, m * (1 - eps), m * (1 + eps))
        objs = [0.5 * beta @ K @ beta - kappa @ beta]
        for _ in range(200):
            beta = _project_box_slab(beta - step * (K @ beta - kappa), 1000.0,
                                     m * (1 - eps), m * (1 + eps))
            objs.append(0.5 * beta @ K @ beta - kappa @ beta)
        assert np.all(np.diff(objs) <= 1e-10)

    def test_non_convergence_flagged_best_iterate(self):
        rng = np.random.default_rng(12)
        Xt = rng.normal(size=(20, 2))
        Xu = rng.normal(2.0, 1.0, size=(40, 2))
        w = kmm_weights(Xt, Xu, KMMParams(max_iters=1, tol=0.0))
        assert "kmm_not_converged" in w.flags
        assert np.all(np.isfinite(w.values)) and np.all(w.values >= 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            kmm_weights(np.empty((0, 2)), np.ones((3, 2)))
        with pytest.raises(ValueError):
            kmm_weights(np.ones((3, 2)), np.ones((3, 3)))
        with pytest.raises(ValueError):
            KMMParams(B=0.0)
