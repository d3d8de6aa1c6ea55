"""Greedy CART trees and seeded bagging forests, classification and regression.

Splits route value <= threshold to the left child. Candidate thresholds are
midpoints between consecutive distinct sorted values; ties between splits are
broken toward the lowest feature index, then the lowest threshold, so fits
are fully deterministic. Forests draw one bootstrap resample per tree with
per-tree seeds ``seed + tree_index``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class TreeNode:
    """One node; leaves carry a class-probability vector or a mean outcome."""

    n_samples: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: np.ndarray | float | None = None

    def is_leaf(self) -> bool:
        return self.left is None


# ---------------------------------------------------------------------------
# Split search
# ---------------------------------------------------------------------------

def _best_split_feature(x: np.ndarray, y: np.ndarray, task: str, n_classes: int, min_leaf: int):
    """Best (cost, threshold) for one feature, or None if no valid split."""
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    boundary = xs[:-1] < xs[1:]
    n_left = np.arange(1, n)
    valid = boundary & (n_left >= min_leaf) & ((n - n_left) >= min_leaf)
    if not valid.any():
        return None
    if task == "classify":
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys.astype(int)] = 1.0
        left_counts = np.cumsum(onehot, axis=0)[:-1]
        right_counts = left_counts[-1] + onehot[-1] - left_counts
        n_right = n - n_left
        sq_left = np.einsum("ij,ij->i", left_counts, left_counts)
        sq_right = np.einsum("ij,ij->i", right_counts, right_counts)
        # weighted Gini = 1 - (sum cl^2/nl + sum cr^2/nr)/n
        cost = 1.0 - (sq_left / n_left + sq_right / n_right) / n
    else:
        s1 = np.cumsum(ys)[:-1]
        s2 = np.cumsum(ys * ys)[:-1]
        t1, t2 = s1[-1] + ys[-1], s2[-1] + ys[-1] * ys[-1]
        n_right = n - n_left
        sse_left = s2 - s1 * s1 / n_left
        sse_right = (t2 - s2) - (t1 - s1) ** 2 / n_right
        cost = (sse_left + sse_right) / n
    cost = np.where(valid, cost, np.inf)
    pos = int(np.argmin(cost))  # first minimum -> lowest threshold on ties
    if not np.isfinite(cost[pos]):
        return None
    return float(cost[pos]), float((xs[pos] + xs[pos + 1]) / 2.0)


def _leaf_value(y: np.ndarray, task: str, n_classes: int):
    if task == "classify":
        counts = np.bincount(y.astype(int), minlength=n_classes)
        return counts / counts.sum()
    return float(np.mean(y))


def _is_pure(y: np.ndarray, task: str) -> bool:
    if task == "classify":
        return bool(np.all(y == y[0]))
    return bool(np.all(y == y[0]))


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    task: str = "classify",
    max_depth: int = 12,
    min_leaf: int = 5,
    n_classes: int | None = None,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> TreeNode:
    """Fit one greedy tree. ``max_features``, when set, draws that many
    candidate features per split from ``rng`` (random-forest mode)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("empty dataset")
    if X.shape[0] != y.shape[0]:
        raise DataError("X and target lengths differ")
    if task not in ("classify", "regress"):
        raise DataError(f"unknown task {task!r}")
    if task == "classify":
        y = y.astype(int)
        if n_classes is None:
            n_classes = int(y.max()) + 1 if y.size else 1
    else:
        y = y.astype(float)
        n_classes = 0
    if X.shape[0] < min_leaf:
        raise DataError(f"need at least min_leaf={min_leaf} rows, got {X.shape[0]}")
    p = X.shape[1]

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        y_node = y[idx]
        node = TreeNode(n_samples=idx.shape[0], value=_leaf_value(y_node, task, n_classes))
        if depth >= max_depth or idx.shape[0] < 2 * min_leaf or _is_pure(y_node, task):
            return node
        if max_features is not None and max_features < p:
            feats = np.sort(rng.choice(p, size=max_features, replace=False))
        else:
            feats = np.arange(p)
        best = None
        for f in feats:
            found = _best_split_feature(X[idx, f], y_node, task, n_classes, min_leaf)
            if found is None:
                continue
            cost, thr = found
            if best is None or cost < best[0]:
                best = (cost, int(f), thr)
        if best is None:
            return node
        _, f, thr = best
        mask = X[idx, f] <= thr
        node.feature = f
        node.threshold = thr
        node.left = build(idx[mask], depth + 1)
        node.right = build(idx[~mask], depth + 1)
        return node

    return build(np.arange(X.shape[0]), 0)


# ---------------------------------------------------------------------------
# Flattened evaluation
# ---------------------------------------------------------------------------

def _flatten(root: TreeNode, n_classes: int):
    feats, thrs, lefts, rights, values = [], [], [], [], []

    def walk(node: TreeNode) -> int:
        i = len(feats)
        feats.append(-1 if node.is_leaf() else node.feature)
        thrs.append(0.0 if node.is_leaf() else node.threshold)
        lefts.append(-1)
        rights.append(-1)
        if n_classes:
            values.append(np.asarray(node.value, dtype=float))
        else:
            values.append(np.array([float(node.value)]))
        if not node.is_leaf():
            lefts[i] = walk(node.left)
            rights[i] = walk(node.right)
        return i

    walk(root)
    return (
        np.array(feats, dtype=np.int64),
        np.array(thrs, dtype=float),
        np.array(lefts, dtype=np.int64),
        np.array(rights, dtype=np.int64),
        np.vstack(values),
    )


def tree_apply(root: TreeNode, X: np.ndarray, n_classes: int) -> np.ndarray:
    """Evaluate a tree on all rows at once; returns leaf payload rows."""
    X = np.asarray(X, dtype=float)
    feats, thrs, lefts, rights, values = _flatten(root, n_classes)
    idx = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        at_leaf = feats[idx] < 0
        if at_leaf.all():
            break
        live = ~at_leaf
        node = idx[live]
        go_left = X[live, feats[node]] <= thrs[node]
        idx[live] = np.where(go_left, lefts[node], rights[node])
    return values[idx]


# ---------------------------------------------------------------------------
# Forests
# ---------------------------------------------------------------------------

@dataclass
class ForestModel:
    """Bagged trees sharing one task; immutable after fit."""

    trees: list[TreeNode]
    task: str
    n_classes: int
    seed: int
    bootstrap: bool
    max_features: int
    n_train: int
    params: dict = field(default_factory=dict)

    def bootstrap_rows(self, tree_index: int) -> np.ndarray:
        """Recreate the bootstrap draw for one tree (first RNG consumption)."""
        rng = np.random.default_rng(self.seed + tree_index)
        if not self.bootstrap:
            return np.arange(self.n_train)
        return rng.integers(0, self.n_train, size=self.n_train)


def default_max_features(p: int, task: str) -> int:
    return max(1, math.ceil(math.sqrt(p)) if task == "classify" else math.ceil(p / 3))


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    task: str = "classify",
    n_trees: int = 200,
    max_features: int | None = None,
    max_depth: int = 12,
    min_leaf: int = 5,
    seed: int = 0,
    bootstrap: bool = True,
    n_classes: int | None = None,
) -> ForestModel:
    """Fit a seeded bagging forest; bit-identical results for a given seed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if n_trees < 1:
        raise DataError("forest needs at least one tree")
    p = X.shape[1]
    if max_features is None:
        max_features = min(p, default_max_features(p, task))
    if max_features > p:
        raise DataError(f"max_features={max_features} exceeds feature count {p}")
    if task == "classify" and n_classes is None:
        n_classes = int(np.max(y)) + 1
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(seed + t)
        rows = rng.integers(0, X.shape[0], size=X.shape[0]) if bootstrap else np.arange(X.shape[0])
        trees.append(
            fit_tree(
                X[rows],
                y[rows],
                task=task,
                max_depth=max_depth,
                min_leaf=min_leaf,
                n_classes=n_classes,
                max_features=max_features if max_features < p else None,
                rng=rng,
            )
        )
    return ForestModel(
        trees=trees,
        task=task,
        n_classes=n_classes or 0,
        seed=seed,
        bootstrap=bootstrap,
        max_features=max_features,
        n_train=X.shape[0],
        params={"n_trees": n_trees, "max_depth": max_depth, "min_leaf": min_leaf},
    )


def _check_width(model: ForestModel | TreeNode, X: np.ndarray):
    if X.ndim != 2:
        raise DataError("prediction input must be 2-D")


def predict_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Average leaf probability vectors across trees; rows sum to 1."""
    if model.task != "classify":
        raise DataError("predict_proba requires a classification forest")
    X = np.asarray(X, dtype=float)
    _check_width(model, X)
    acc = np.zeros((X.shape[0], model.n_classes))
    for tree in model.trees:
        acc += tree_apply(tree, X, model.n_classes)
    return acc / len(model.trees)


def predict_value(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Average leaf means across trees."""
    if model.task != "regress":
        raise DataError("predict_value requires a regression forest")
    X = np.asarray(X, dtype=float)
    _check_width(model, X)
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        acc += tree_apply(tree, X, 0)[:, 0]
    return acc / len(model.trees)


def oob_predictions(model: ForestModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-bag class probabilities and a mask of rows with >= 1 OOB tree.

    Only valid when ``X`` is the training matrix the forest was fit on.
    """
    if not model.bootstrap:
        raise DataError("out-of-bag predictions need bootstrap resampling")
    n = X.shape[0]
    acc = np.zeros((n, max(model.n_classes, 1)))
    counts = np.zeros(n)
    for t, tree in enumerate(model.trees):
        in_bag = np.zeros(n, dtype=bool)
        in_bag[model.bootstrap_rows(t)] = True
        oob = ~in_bag
        if not oob.any():
            continue
        acc[oob] += tree_apply(tree, X[oob], model.n_classes)
        counts[oob] += 1
    mask = counts > 0
    acc[mask] /= counts[mask, None]
    return acc, mask


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf():
        value = node.value.tolist() if isinstance(node.value, np.ndarray) else node.value
        return {"n": node.n_samples, "value": value}
    return {
        "n": node.n_samples,
        "feature": node.feature,
        "threshold": node.threshold,
        "value": node.value.tolist() if isinstance(node.value, np.ndarray) else node.value,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(obj: dict) -> TreeNode:
    value = obj.get("value")
    if isinstance(value, list):
        value = np.array(value, dtype=float)
    node = TreeNode(n_samples=obj["n"], value=value)
    if "feature" in obj:
        node.feature = obj["feature"]
        node.threshold = obj["threshold"]
        node.left = _node_from_dict(obj["left"])
        node.right = _node_from_dict(obj["right"])
    return node


def forest_to_json(model: ForestModel) -> str:
    return json.dumps(
        {
            "task": model.task,
            "n_classes": model.n_classes,
            "seed": model.seed,
            "bootstrap": model.bootstrap,
            "max_features": model.max_features,
            "n_train": model.n_train,
            "params": model.params,
            "trees": [_node_to_dict(t) for t in model.trees],
        },
        sort_keys=True,
    )


def forest_from_json(text: str) -> ForestModel:
    obj = json.loads(text)
    return ForestModel(
        trees=[_node_from_dict(t) for t in obj["trees"]],
        task=obj["task"],
        n_classes=obj["n_classes"],
        seed=obj["seed"],
        bootstrap=obj["bootstrap"],
        max_features=obj["max_features"],
        n_train=obj["n_train"],
        params=obj["params"],
    )
