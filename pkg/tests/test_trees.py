import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pnnkit as pk
from pnnkit.errors import DataError
from pnnkit.trees import ForestModel, TreeNode, tree_apply


def _xor_data(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, 2))
    y = ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.5)).astype(int)
    return X, y


class TestFitTree:
    def test_pure_labels_single_leaf(self):
        X = np.random.default_rng(0).uniform(0, 1, (30, 3))
        tree = pk.fit_tree(X, np.ones(30, dtype=int), "classify", n_classes=2)
        assert tree.is_leaf()
        assert tree.value.tolist() == [0.0, 1.0]

    def test_depth_one_threshold_split(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, 200)
        y = (x > 0.5).astype(int)
        tree = pk.fit_tree(x[:, None], y, "classify", max_depth=1, min_leaf=1)
        below = x[x <= 0.5].max()
        above = x[x > 0.5].min()
        assert below < tree.threshold <= above
        pred = np.argmax(tree_apply(tree, x[:, None], 2), axis=1)
        assert (pred == y).all()

    def test_constant_regression_target_single_leaf(self):
        X = np.random.default_rng(2).uniform(0, 1, (20, 2))
        tree = pk.fit_tree(X, np.full(20, 3.5), "regress")
        assert tree.is_leaf()
        assert tree.value == 3.5

    def test_unlimited_depth_fits_training_data(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 1, (150, 3))
        y = rng.integers(0, 3, 150)
        tree = pk.fit_tree(X, y, "classify", max_depth=50, min_leaf=1, n_classes=3)
        pred = np.argmax(tree_apply(tree, X, 3), axis=1)
        assert (pred == y).all()

    def test_empty_dataset_errors(self):
        with pytest.raises(DataError):
            pk.fit_tree(np.zeros((0, 2)), np.zeros(0), "classify")

    def test_monotone_transform_same_train_predictions(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(0.1, 1, (120, 2))
        y = ((X[:, 0] ** 2 + X[:, 1]) > 0.8).astype(int)
        t1 = pk.fit_tree(X, y, "classify", max_depth=4, min_leaf=2, n_classes=2)
        X2 = X.copy()
        X2[:, 0] = X2[:, 0] ** 3  # strictly increasing on the data range
        t2 = pk.fit_tree(X2, y, "classify", max_depth=4, min_leaf=2, n_classes=2)
        p1 = np.argmax(tree_apply(t1, X, 2), axis=1)
        p2 = np.argmax(tree_apply(t2, X2, 2), axis=1)
        assert (p1 == p2).all()


class TestForest:
    def test_degenerate_forest_equals_single_tree(self):
        X, y = _xor_data(300, 5)
        forest = pk.fit_forest(X, y, "classify", n_trees=1, max_features=2, bootstrap=False, seed=0, max_depth=6, min_leaf=2)
        tree = pk.fit_tree(X, y, "classify", max_depth=6, min_leaf=2, n_classes=2)
        assert (pk.predict_proba(forest, X) == tree_apply(tree, X, 2)).all()

    def test_same_seed_bit_identical(self):
        X, y = _xor_data(300, 6)
        a = pk.fit_forest(X, y, "classify", n_trees=15, seed=42, max_depth=6)
        b = pk.fit_forest(X, y, "classify", n_trees=15, seed=42, max_depth=6)
        Xq = np.random.default_rng(7).uniform(0, 1, (50, 2))
        assert (pk.predict_proba(a, Xq) == pk.predict_proba(b, Xq)).all()

    def test_xor_oob_accuracy(self):
        X, y = _xor_data(2000, 8)
        forest = pk.fit_forest(X, y, "classify", n_trees=100, max_depth=4, min_leaf=5, seed=1)
        proba, mask = pk.oob_predictions(forest, X)
        acc = np.mean(np.argmax(proba[mask], axis=1) == y[mask])
        assert acc >= 0.9

    def test_two_tree_average(self):
        leaf_a = TreeNode(n_samples=10, value=np.array([0.8, 0.2]))
        leaf_b = TreeNode(n_samples=10, value=np.array([0.4, 0.6]))
        model = ForestModel(
            trees=[leaf_a, leaf_b], task="classify", n_classes=2, seed=0,
            bootstrap=False, max_features=1, n_train=10,
        )
        proba = pk.predict_proba(model, np.zeros((3, 1)))
        assert proba[:, 1].tolist() == [pytest.approx(0.4)] * 3

    def test_probability_rows_sum_to_one(self):
        X, y = _xor_data(400, 9)
        forest = pk.fit_forest(X, y, "classify", n_trees=20, seed=3, max_depth=8)
        proba = pk.predict_proba(forest, np.random.default_rng(1).uniform(0, 1, (1000, 2)))
        assert np.abs(proba.sum(axis=1) - 1.0).max() < 1e-9
        assert (proba >= 0).all() and (proba <= 1).all()

    def test_tree_order_invariance(self):
        X, y = _xor_data(300, 10)
        forest = pk.fit_forest(X, y, "classify", n_trees=10, seed=4, max_depth=5)
        shuffled = ForestModel(
            trees=list(reversed(forest.trees)), task=forest.task, n_classes=forest.n_classes,
            seed=forest.seed, bootstrap=forest.bootstrap, max_features=forest.max_features,
            n_train=forest.n_train,
        )
        Xq = np.random.default_rng(2).uniform(0, 1, (60, 2))
        assert np.abs(pk.predict_proba(forest, Xq) - pk.predict_proba(shuffled, Xq)).max() < 1e-12

    def test_regression_average(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(0, 1, (500, 2))
        y = 2.0 * X[:, 0] + 1.0
        forest = pk.fit_forest(X, y, "regress", n_trees=50, seed=5, max_depth=8, min_leaf=5)
        pred = pk.predict_value(forest, X)
        assert np.mean(np.abs(pred - y)) < 0.1

    def test_json_roundtrip_identical_predictions(self):
        X, y = _xor_data(200, 12)
        forest = pk.fit_forest(X, y, "classify", n_trees=8, seed=6, max_depth=5)
        back = pk.forest_from_json(pk.forest_to_json(forest))
        Xq = np.random.default_rng(3).uniform(0, 1, (40, 2))
        assert (pk.predict_proba(forest, Xq) == pk.predict_proba(back, Xq)).all()

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=15, deadline=None)
    def test_leaf_probabilities_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, 1, (40, 2))
        y = rng.integers(0, 3, 40)
        tree = pk.fit_tree(X, y, "classify", max_depth=4, min_leaf=1, n_classes=3)

        def leaves(node):
            if node.is_leaf():
                return [node]
            return leaves(node.left) + leaves(node.right)

        for leaf in leaves(tree):
            assert abs(leaf.value.sum() - 1.0) < 1e-12
