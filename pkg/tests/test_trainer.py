import numpy as np
import pytest

from flatforest.data import Dataset, synth_dataset
from flatforest.ensemble import Internal, Leaf, build_flat
from flatforest.engine import predict_static_batch
from flatforest.metrics import metric
from flatforest.trainer import (FitParams, fit_gbt, fit_random_forest, fit_tree,
                                oversample_minority)


def _dataset(x, y, task="classification"):
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    dtype = np.int64 if task == "classification" else np.float64
    return Dataset(features=x, labels=np.asarray(y, dtype=dtype))


def gini_oracle_best_split(x, y, n_classes):
    """Brute force over every midpoint of consecutive sorted unique values."""
    best = None
    values = np.unique(x)
    for a, b in zip(values[:-1], values[1:]):
        thr = (a + b) / 2
        left, right = y[x <= thr], y[x > thr]

        def gini(part):
            counts = np.bincount(part, minlength=n_classes)
            p = counts / len(part)
            return 1.0 - np.sum(p * p)

        score = (len(left) * gini(left) + len(right) * gini(right)) / len(y)
        if best is None or score < best[0]:
            best = (score, thr)
    return best


class TestFitTree:
    def test_stump_on_separable_1d(self):
        x = [0.0] * 10 + [1.0] * 10
        y = [0] * 10 + [1] * 10
        data = _dataset(x, y)
        tree = fit_tree(data, "classification", max_depth=1)
        assert isinstance(tree, Internal)
        assert 0.0 < tree.threshold < 1.0
        oracle = gini_oracle_best_split(np.asarray(x), np.asarray(y, dtype=np.int64), 2)
        assert tree.threshold == pytest.approx(oracle[1])
        preds = [0 if xi <= tree.threshold else 1 for xi in x]
        assert preds == y  # training accuracy 1.0
        assert tree.left.values == (1.0, 0.0)
        assert tree.right.values == (0.0, 1.0)

    def test_pure_node_returns_single_leaf(self):
        data = _dataset([1.0, 2.0, 3.0], [1, 1, 1])
        tree = fit_tree(data, "classification", max_depth=3, n_classes=2)
        assert isinstance(tree, Leaf)
        assert tree.values == (0.0, 1.0)

    def test_regression_stump(self):
        # variance-reduction oracle: the only split is at 0.5, children means 0 and 2
        data = _dataset([0.0, 1.0], [0.0, 2.0], task="regression")
        tree = fit_tree(data, "regression", max_depth=1)
        assert isinstance(tree, Internal)
        assert tree.threshold == pytest.approx(0.5)
        assert tree.left.values == (0.0,)
        assert tree.right.values == (2.0,)

    def test_empty_dataset_rejected(self):
        data = Dataset(features=np.empty((0, 2)), labels=np.empty(0, dtype=np.int64))
        with pytest.raises(ValueError, match="empty"):
            fit_tree(data, "classification", max_depth=1, n_classes=2)

    def test_constant_features_single_leaf(self):
        data = _dataset([5.0, 5.0, 5.0, 5.0], [0, 1, 0, 1])
        tree = fit_tree(data, "classification", max_depth=3, n_classes=2)
        assert isinstance(tree, Leaf)
        assert tree.values == (0.5, 0.5)

    def test_matches_oracle_on_random_data(self, rng):
        for _ in range(20):
            x = rng.normal(size=40)
            y = (rng.random(40) < 0.5).astype(np.int64)
            if len(np.unique(y)) < 2 or len(np.unique(x)) < 2:
                continue
            tree = fit_tree(_dataset(x, y), "classification", max_depth=1, n_classes=2)
            if isinstance(tree, Leaf):
                continue
            oracle = gini_oracle_best_split(x, y, 2)
            got = gini_oracle_best_split(x, y, 2)[0]
            # the chosen threshold attains the oracle's optimal impurity
            left, right = y[x <= tree.threshold], y[x > tree.threshold]

            def gini(part):
                p = np.bincount(part, minlength=2) / len(part)
                return 1.0 - np.sum(p * p)

            score = (len(left) * gini(left) + len(right) * gini(right)) / len(y)
            assert score == pytest.approx(oracle[0])


class TestRandomForest:
    def test_single_tree_no_randomness_equals_fit_tree(self):
        splits = synth_dataset("gaussian_blobs", 200, 3, 4, 0.2, seed=3)
        data = splits.train
        params = FitParams(n_estimators=1, max_depth=3, bootstrap=False,
                           feature_subsample=1.0, rng_seed=0)
        trees, meta = fit_random_forest(data, params)
        direct = fit_tree(data, "classification", max_depth=3, n_classes=3)
        assert trees[0] == direct
        assert meta.kind == "rf" and meta.n_estimators == 1

    def test_forest_beats_single_tree_on_blobs(self):
        splits = synth_dataset("gaussian_blobs", 400, 3, 6, 0.6, seed=11)
        data = splits.train
        single = fit_random_forest(data, FitParams(1, 3, rng_seed=5))
        forest = fit_random_forest(data, FitParams(8, 3, rng_seed=5))

        def train_bal_acc(model):
            flat = build_flat(*model)
            preds, _, _ = predict_static_batch(flat, data.features)
            return metric(preds, data.labels, "balanced_accuracy", n_classes=3)

        assert train_bal_acc(forest) >= train_bal_acc(single)

    def test_determinism(self):
        splits = synth_dataset("gaussian_blobs", 200, 2, 4, 0.4, seed=9)
        p = FitParams(4, 3, rng_seed=42)
        t1, m1 = fit_random_forest(splits.train, p)
        t2, m2 = fit_random_forest(splits.train, p)
        f1, f2 = build_flat(t1, m1), build_flat(t2, m2)
        assert np.array_equal(f1.alpha, f2.alpha)
        assert np.array_equal(f1.fidx, f2.fidx)
        assert f1.leaves is not None and np.array_equal(f1.leaves, f2.leaves)

    def test_prefix_property(self):
        # the first k trees of an N-tree forest equal the k-tree forest
        splits = synth_dataset("gaussian_blobs", 200, 3, 5, 0.4, seed=9)
        big, _ = fit_random_forest(splits.train, FitParams(8, 3, rng_seed=7))
        small, _ = fit_random_forest(splits.train, FitParams(3, 3, rng_seed=7))
        assert big[:3] == small

    def test_binary_forest_scalar_leaves(self):
        splits = synth_dataset("binary_imbalanced", 200, 2, 4, 0.4, seed=2)
        trees, meta = fit_random_forest(splits.train, FitParams(3, 3, rng_seed=1))
        flat = build_flat(trees, meta)
        assert flat.leaf_arity == 1

    def test_multiclass_rows_sum_to_one(self):
        splits = synth_dataset("gaussian_blobs", 300, 4, 5, 0.5, seed=21)
        trees, meta = fit_random_forest(splits.train, FitParams(5, 4, rng_seed=3))
        flat = build_flat(trees, meta)
        assert np.allclose(flat.leaves.sum(axis=1), 1.0, atol=1e-6)


class TestGBT:
    def test_binary_all_one_class_hand_computation(self):
        # y all 0: residual = 0 - sigmoid(0) = -0.5 everywhere, single leaf,
        # scaled by the learning rate
        data = _dataset([0.0, 1.0, 2.0, 3.0], [0, 0, 0, 0])
        params = FitParams(1, 2, learning_rate=0.1, rng_seed=0)
        trees, meta = fit_gbt(data, params, n_classes=2)
        assert len(trees) == 1
        assert isinstance(trees[0], Leaf)
        assert trees[0].values[0] == pytest.approx(-0.5 * 0.1)
        flat = build_flat(trees, meta)
        preds, acc, _ = predict_static_batch(flat, data.features)
        assert acc[0, 1] < 0
        assert preds.tolist() == [0, 0, 0, 0]

    def test_zero_estimators_forbidden(self):
        with pytest.raises(ValueError):
            FitParams(0, 2)

    def test_determinism(self):
        splits = synth_dataset("gaussian_blobs", 200, 3, 4, 0.5, seed=4)
        p = FitParams(3, 3, learning_rate=0.2, rng_seed=11)
        t1, m1 = fit_gbt(splits.train, p)
        t2, _ = fit_gbt(splits.train, p)
        assert t1 == t2
        assert m1.expected_tree_count == 9  # M trees per estimator

    def test_binary_one_tree_per_estimator(self):
        splits = synth_dataset("binary_imbalanced", 200, 2, 4, 0.4, seed=5)
        trees, meta = fit_gbt(splits.train, FitParams(4, 3, rng_seed=0))
        assert len(trees) == 4
        assert meta.trees_per_estimator == 1

    def test_train_logloss_non_increasing(self):
        splits = synth_dataset("gaussian_blobs", 300, 3, 5, 0.6, seed=13)
        data = splits.train
        losses = []
        for n in (1, 2, 4, 8):
            trees, meta = fit_gbt(data, FitParams(n, 3, learning_rate=0.3, rng_seed=2))
            flat = build_flat(trees, meta)
            _, raw, _ = predict_static_batch(flat, data.features)
            z = raw - raw.max(axis=1, keepdims=True)
            prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
            picked = prob[np.arange(data.n), data.labels]
            losses.append(-np.mean(np.log(np.clip(picked, 1e-12, None))))
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))

    def test_prefix_property(self):
        splits = synth_dataset("gaussian_blobs", 200, 3, 4, 0.4, seed=6)
        big, _ = fit_gbt(splits.train, FitParams(5, 3, rng_seed=3))
        small, _ = fit_gbt(splits.train, FitParams(2, 3, rng_seed=3))
        assert big[:len(small)] == small


class TestOversample:
    def test_balanced_unchanged(self, rng):
        data = _dataset(list(range(20)), [0] * 10 + [1] * 10)
        out = oversample_minority(data, rng)
        assert out.n == 20
        assert np.array_equal(out.features, data.features)

    def test_minority_topped_up(self, rng):
        data = _dataset(list(range(14)), [0] * 10 + [1] * 4)
        out = oversample_minority(data, rng)
        counts = np.bincount(out.labels)
        assert counts.tolist() == [10, 10]
        # original rows preserved, additions drawn from the minority class
        assert np.array_equal(out.features[:14], data.features)
        assert (out.labels[14:] == 1).all()
        assert np.isin(out.features[14:], data.features[10:]).all()

    def test_empty_class_rejected(self, rng):
        data = _dataset([1.0], [0])
        with pytest.raises(ValueError, match="class 1"):
            oversample_minority(data, rng, n_classes=2)
