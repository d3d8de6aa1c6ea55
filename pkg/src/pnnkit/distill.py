"""Mirror a policy network with an interpretable axis-aligned tree.

The mirror is a classification tree fit on unnormalized feature values with
the network's prescriptions as class labels: greedy induction first, then a
coordinate-descent local search that revisits internal nodes in seeded
random order, re-optimizing each node's (feature, threshold) pair or
collapsing it to a leaf whenever that strictly lowers
misclassifications + alpha * leaf count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .trees import TreeNode, fit_tree, tree_apply


@dataclass
class MirroredTree:
    root: TreeNode
    max_depth: int
    min_leaf: int
    alpha: float
    fidelity_train: float
    feature_names: list[str]
    class_labels: list[str]
    passes_run: int = 0
    moves_accepted: int = 0
    objective_trace: list[float] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return _depth(self.root)

    def predict(self, X: np.ndarray) -> np.ndarray:
        payload = tree_apply(self.root, np.asarray(X, dtype=float), len(self.class_labels))
        return np.argmax(payload, axis=1)


def _depth(node: TreeNode) -> int:
    if node.is_leaf():
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _count_leaves(node: TreeNode) -> int:
    if node.is_leaf():
        return 1
    return _count_leaves(node.left) + _count_leaves(node.right)


def _internal_nodes(node: TreeNode) -> list[TreeNode]:
    if node.is_leaf():
        return []
    return [node] + _internal_nodes(node.left) + _internal_nodes(node.right)


def _route(node: TreeNode, X: np.ndarray, idx: np.ndarray, out: dict):
    out[id(node)] = idx
    if node.is_leaf() or idx.size == 0:
        if not node.is_leaf():
            _route(node.left, X, idx[:0], out)
            _route(node.right, X, idx[:0], out)
        return
    mask = X[idx, node.feature] <= node.threshold
    _route(node.left, X, idx[mask], out)
    _route(node.right, X, idx[~mask], out)


def _subtree_predict(node: TreeNode, X: np.ndarray, idx: np.ndarray, n_classes: int) -> np.ndarray:
    if idx.size == 0:
        return np.zeros(0, dtype=int)
    payload = tree_apply(node, X[idx], n_classes)
    return np.argmax(payload, axis=1)


def _refit_payloads(node: TreeNode, X: np.ndarray, y: np.ndarray, idx: np.ndarray, n_classes: int):
    """Recompute class-count payloads below ``node`` from the rows that now
    reach it; leaves that end up empty keep their previous payload."""
    node.n_samples = int(idx.size)
    if idx.size:
        counts = np.bincount(y[idx], minlength=n_classes).astype(float)
        node.value = counts / counts.sum()
    if node.is_leaf():
        return
    if idx.size == 0:
        _refit_payloads(node.left, X, y, idx, n_classes)
        _refit_payloads(node.right, X, y, idx, n_classes)
        return
    mask = X[idx, node.feature] <= node.threshold
    _refit_payloads(node.left, X, y, idx[mask], n_classes)
    _refit_payloads(node.right, X, y, idx[~mask], n_classes)


def _objective(root: TreeNode, X: np.ndarray, y: np.ndarray, n_classes: int, alpha: float) -> float:
    pred = np.argmax(tree_apply(root, X, n_classes), axis=1)
    return float(np.sum(pred != y)) + alpha * _count_leaves(root)


def _best_node_split(X, y, idx, pred_left, pred_right, min_leaf):
    """Sweep every (feature, midpoint) for one node given fixed child
    subtrees; returns (errors, feature, threshold) or None."""
    err_left = (pred_left != y[idx]).astype(float)
    err_right = (pred_right != y[idx]).astype(float)
    n = idx.size
    best = None
    for f in range(X.shape[1]):
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        boundary = xs[:-1] < xs[1:]
        n_l = np.arange(1, n)
        valid = boundary & (n_l >= min_leaf) & ((n - n_l) >= min_leaf)
        if not valid.any():
            continue
        pref = np.cumsum(err_left[order])[:-1]
        suff_total = err_right[order].sum()
        suff = suff_total - np.cumsum(err_right[order])[:-1]
        errs = np.where(valid, pref + suff, np.inf)
        pos = int(np.argmin(errs))
        if not np.isfinite(errs[pos]):
            continue
        cand = (float(errs[pos]), f, float((xs[pos] + xs[pos + 1]) / 2.0))
        if best is None or cand[0] < best[0]:
            best = cand
    return best


def distill(
    X_raw: np.ndarray,
    prescriptions: np.ndarray,
    n_treatments: int,
    feature_names: list[str] | None = None,
    class_labels: list[str] | None = None,
    max_depth: int = 7,
    min_leaf: int = 1,
    alpha: float = 0.0,
    passes: int = 30,
    seed: int = 0,
) -> MirroredTree:
    """Fit the mirror tree: greedy induction, then local-search refinement.

    The search objective (misclassified rows + alpha * leaves) never
    increases across accepted moves and the search stops after a full pass
    without improvement or when the pass budget runs out.
    """
    X = np.asarray(X_raw, dtype=float)
    y = np.asarray(prescriptions, dtype=int)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("empty input")
    if y.min() < 0 or y.max() >= n_treatments:
        raise DataError("prescriptions outside the treatment catalog")
    if feature_names is None:
        feature_names = [f"x{j + 1}" for j in range(X.shape[1])]
    if class_labels is None:
        class_labels = [str(k) for k in range(n_treatments)]

    root = fit_tree(X, y, task="classify", max_depth=max_depth, min_leaf=min_leaf, n_classes=n_treatments)
    rng = np.random.default_rng(seed)
    objective = _objective(root, X, y, n_treatments, alpha)
    trace = [objective]
    moves = 0
    passes_run = 0

    for _ in range(passes):
        passes_run += 1
        improved = False
        internal = _internal_nodes(root)
        if not internal:
            break
        for node in rng.permutation(len(internal)):
            node = internal[node]
            routing: dict = {}
            _route(root, X, np.arange(X.shape[0]), routing)
            idx = routing.get(id(node))
            if idx is None or idx.size == 0:
                continue
            pred_left = _subtree_predict(node.left, X, idx, n_treatments)
            pred_right = _subtree_predict(node.right, X, idx, n_treatments)

            # candidate 1: re-split with fixed child subtrees
            split = _best_node_split(X, y, idx, pred_left, pred_right, min_leaf)
            # candidate 2: collapse to a leaf
            counts = np.bincount(y[idx], minlength=n_treatments)
            leaf_err = float(idx.size - counts.max())
            leaf_delta_leaves = 1 - _count_leaves(node)

            cur_pred = _subtree_predict(node, X, idx, n_treatments)
            cur_err = float(np.sum(cur_pred != y[idx]))

            applied = None
            if split is not None:
                cand_obj = objective - cur_err + split[0]
                if cand_obj < objective:
                    applied = ("split", split, cand_obj)
            leaf_obj = objective - cur_err + leaf_err + alpha * leaf_delta_leaves
            if leaf_obj < objective and (applied is None or leaf_obj < applied[2]):
                applied = ("leaf", None, leaf_obj)

            if applied is None:
                continue
            if applied[0] == "split":
                _, (_, f, thr), _ = applied
                node.feature, node.threshold = f, thr
            else:
                node.feature = node.threshold = None
                node.left = node.right = None
            _refit_payloads(node, X, y, idx, n_treatments)
            new_obj = _objective(root, X, y, n_treatments, alpha)
            objective = new_obj
            trace.append(objective)
            moves += 1
            improved = True
        if not improved:
            break

    tree = MirroredTree(
        root=root,
        max_depth=max_depth,
        min_leaf=min_leaf,
        alpha=alpha,
        fidelity_train=0.0,
        feature_names=list(feature_names),
        class_labels=list(class_labels),
        passes_run=passes_run,
        moves_accepted=moves,
        objective_trace=trace,
    )
    tree.fidelity_train = fidelity(tree, X, y)
    return tree


def fidelity(tree: MirroredTree, X_raw: np.ndarray, prescriptions: np.ndarray) -> float:
    """Fraction of rows where the tree reproduces the network's prescription."""
    X = np.asarray(X_raw, dtype=float)
    y = np.asarray(prescriptions, dtype=int)
    if X.shape[0] != y.shape[0]:
        raise DataError("feature rows and prescriptions differ in length")
    return float(np.mean(tree.predict(X) == y))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_tree(tree: MirroredTree, fmt: str = "dot") -> str:
    if fmt == "dot":
        return _to_dot(tree)
    if fmt == "json":
        return _to_json(tree)
    raise DataError(f"unknown export format {fmt!r}")


def _to_dot(tree: MirroredTree) -> str:
    lines = ["digraph mirrored_tree {", "  node [shape=box];"]
    counter = [0]

    def walk(node: TreeNode) -> int:
        i = counter[0]
        counter[0] += 1
        if node.is_leaf():
            label = tree.class_labels[int(np.argmax(node.value))]
            lines.append(f'  n{i} [label="{label}\\nn={node.n_samples}"];')
            return i
        name = tree.feature_names[node.feature]
        lines.append(f'  n{i} [label="{name} <= {node.threshold!r}"];')
        li = walk(node.left)
        ri = walk(node.right)
        lines.append(f"  n{i} -> n{li};")
        lines.append(f"  n{i} -> n{ri};")
        return i

    walk(tree.root)
    lines.append("}")
    return "\n".join(lines) + "\n"


def _node_dict(node: TreeNode) -> dict:
    if node.is_leaf():
        return {"n": node.n_samples, "value": np.asarray(node.value).tolist()}
    return {
        "n": node.n_samples,
        "feature": node.feature,
        "threshold": node.threshold,
        "value": np.asarray(node.value).tolist(),
        "left": _node_dict(node.left),
        "right": _node_dict(node.right),
    }


def _to_json(tree: MirroredTree) -> str:
    return json.dumps(
        {
            "max_depth": tree.max_depth,
            "min_leaf": tree.min_leaf,
            "alpha": tree.alpha,
            "fidelity_train": tree.fidelity_train,
            "feature_names": tree.feature_names,
            "class_labels": tree.class_labels,
            "root": _node_dict(tree.root),
        },
        sort_keys=True,
    )


def tree_from_json(text: str) -> MirroredTree:
    obj = json.loads(text)

    def build(rec: dict) -> TreeNode:
        node = TreeNode(n_samples=rec["n"], value=np.array(rec["value"], dtype=float))
        if "feature" in rec:
            node.feature = rec["feature"]
            node.threshold = rec["threshold"]
            node.left = build(rec["left"])
            node.right = build(rec["right"])
        return node

    return MirroredTree(
        root=build(obj["root"]),
        max_depth=obj["max_depth"],
        min_leaf=obj["min_leaf"],
        alpha=obj["alpha"],
        fidelity_train=obj["fidelity_train"],
        feature_names=obj["feature_names"],
        class_labels=obj["class_labels"],
    )
