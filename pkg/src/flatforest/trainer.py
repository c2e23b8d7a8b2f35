"""Desk-scale fitting of RF and GBT ensembles.

Greedy CART with exhaustive midpoint split search; deterministic throughout:
candidate thresholds are midpoints between consecutive sorted unique feature
values, impurity ties break on the lowest feature index then the lowest
threshold, and all randomness flows from a single seeded generator consumed
in a fixed per-estimator order (bootstrap draw first, feature mask second).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .ensemble import EnsembleMeta, Internal, Leaf, TreeNode


@dataclass
class FitParams:
    n_estimators: int
    max_depth: int
    feature_subsample: float = 1.0   # RF only
    bootstrap: bool = True           # RF only
    learning_rate: float = 0.1       # GBT only
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.feature_subsample <= 1.0):
            raise ValueError("feature_subsample must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _class_counts(y: np.ndarray, n_classes: int) -> np.ndarray:
    return np.bincount(y, minlength=n_classes).astype(np.float64)


def _best_split_classification(X, y, n_classes, feature_mask):
    """Exhaustive Gini split search; returns (feature, threshold) or None."""
    n = y.shape[0]
    onehot = np.zeros((n, n_classes), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0
    best = None  # (impurity, feature, threshold)
    for f in feature_mask:
        v = X[:, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        cum = np.cumsum(onehot[order], axis=0)
        cut = np.nonzero(vs[1:] != vs[:-1])[0] + 1  # left side sizes
        if cut.size == 0:
            continue
        left = cum[cut - 1]
        total = cum[-1]
        right = total - left
        nl = cut.astype(np.float64)
        nr = n - nl
        gini_l = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
        gini_r = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
        weighted = (nl * gini_l + nr * gini_r) / n
        k = int(np.argmin(weighted))  # first minimum = lowest threshold
        score = weighted[k]
        if best is None or score < best[0]:
            thr = (vs[cut[k] - 1] + vs[cut[k]]) / 2.0
            best = (score, int(f), float(thr))
    if best is None:
        return None
    return best[1], best[2]


def _best_split_regression(X, y, feature_mask):
    """Split minimizing total child sum-of-squares (variance reduction)."""
    n = y.shape[0]
    best = None
    for f in feature_mask:
        v = X[:, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y[order]
        s1 = np.cumsum(ys)
        s2 = np.cumsum(ys * ys)
        cut = np.nonzero(vs[1:] != vs[:-1])[0] + 1
        if cut.size == 0:
            continue
        nl = cut.astype(np.float64)
        nr = n - nl
        sl1, sl2 = s1[cut - 1], s2[cut - 1]
        sr1, sr2 = s1[-1] - sl1, s2[-1] - sl2
        sse = (sl2 - sl1 * sl1 / nl) + (sr2 - sr1 * sr1 / nr)
        k = int(np.argmin(sse))
        score = sse[k]
        if best is None or score < best[0]:
            thr = (vs[cut[k] - 1] + vs[cut[k]]) / 2.0
            best = (score, int(f), float(thr))
    if best is None:
        return None
    return best[1], best[2]


def _fit_tree(X, y, task, max_depth, feature_mask, n_classes,
              train_pred: Optional[np.ndarray] = None) -> TreeNode:
    """Recursive grower; optionally records each training row's leaf value."""

    def make_leaf(idx) -> Leaf:
        if task == "classification":
            counts = _class_counts(y[idx], n_classes)
            values = tuple(counts / counts.sum())
        else:
            values = (float(np.mean(y[idx])),)
        if train_pred is not None:
            train_pred[idx] = values[0] if task == "regression" else 0.0
        return Leaf(values)

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        if depth >= max_depth or idx.shape[0] < 2:
            return make_leaf(idx)
        yn = y[idx]
        if task == "classification":
            if (yn == yn[0]).all():
                return make_leaf(idx)
            split = _best_split_classification(X[idx], yn, n_classes, feature_mask)
        else:
            if np.ptp(yn) == 0.0:
                return make_leaf(idx)
            split = _best_split_regression(X[idx], yn, feature_mask)
        if split is None:  # all masked features constant within this node
            return make_leaf(idx)
        f, thr = split
        go_left = X[idx, f] <= thr
        return Internal(f, thr, grow(idx[go_left], depth + 1), grow(idx[~go_left], depth + 1))

    return grow(np.arange(X.shape[0]), 0)


def fit_tree(data: Dataset, task: str, max_depth: int,
             feature_mask: Optional[np.ndarray] = None,
             rng: Optional[np.random.Generator] = None,
             n_classes: Optional[int] = None) -> TreeNode:
    """Fit a single CART tree; rng is accepted for interface symmetry (unused)."""
    del rng
    if task not in ("classification", "regression"):
        raise ValueError(f"unknown task {task!r}")
    X = np.asarray(data.features, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a tree on an empty dataset")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if feature_mask is None:
        feature_mask = np.arange(X.shape[1])
    if task == "classification":
        y = np.asarray(data.labels, dtype=np.int64)
        if n_classes is None:
            n_classes = int(y.max()) + 1
    else:
        y = np.asarray(data.labels, dtype=np.float64)
    return _fit_tree(X, y, task, max_depth, np.sort(np.asarray(feature_mask)), n_classes)


def _to_scalar_leaves(node: TreeNode) -> TreeNode:
    """Keep only P(class 0) in each leaf (binary classification storage)."""
    if isinstance(node, Leaf):
        return Leaf((node.values[0],))
    return Internal(node.feature, node.threshold,
                    _to_scalar_leaves(node.left), _to_scalar_leaves(node.right))


def fit_random_forest(data: Dataset, params: FitParams,
                      n_classes: Optional[int] = None):
    """Fit N classification trees on bootstrap resamples with per-tree feature masks.

    Binary forests store a single P(class 0) scalar per leaf so that leaves
    can later be folded into the node array.
    """
    X = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    n, n_feat = X.shape
    k = math.ceil(params.feature_subsample * n_feat)
    rng = np.random.default_rng(params.rng_seed)
    trees: list[TreeNode] = []
    for _ in range(params.n_estimators):
        idx = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        mask = np.sort(rng.choice(n_feat, size=k, replace=False))
        tree = _fit_tree(X[idx], y[idx], "classification", params.max_depth,
                         mask, n_classes)
        if n_classes == 2:
            tree = _to_scalar_leaves(tree)
        trees.append(tree)
    meta = EnsembleMeta(kind="rf", n_estimators=params.n_estimators,
                        n_classes=n_classes, max_depth=params.max_depth)
    return trees, meta


def _softmax(raw: np.ndarray) -> np.ndarray:
    z = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _scale_leaves(node: TreeNode, lr: float) -> TreeNode:
    if isinstance(node, Leaf):
        return Leaf(tuple(v * lr for v in node.values))
    return Internal(node.feature, node.threshold,
                    _scale_leaves(node.left, lr), _scale_leaves(node.right, lr))


def fit_gbt(data: Dataset, params: FitParams, n_classes: Optional[int] = None):
    """Boosted regression trees on the negative log-loss gradient.

    Raw scores start at 0. Binary problems use one tree per estimator (the
    class-1 logit); M > 2 uses M trees per estimator, one per class. Leaf
    values carry the learning-rate scaling.
    """
    X = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a GBT on an empty dataset")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if n_classes < 2:
        raise ValueError("GBT fitting needs at least 2 classes")
    n = X.shape[0]
    mask = np.arange(X.shape[1])
    lr = params.learning_rate
    trees: list[TreeNode] = []

    if n_classes == 2:
        raw = np.zeros(n)
        target = (y == 1).astype(np.float64)
        for _ in range(params.n_estimators):
            residual = target - 1.0 / (1.0 + np.exp(-raw))
            pred = np.empty(n)
            tree = _fit_tree(X, residual, "regression", params.max_depth, mask,
                             None, train_pred=pred)
            trees.append(_scale_leaves(tree, lr))
            raw += lr * pred
    else:
        raw = np.zeros((n, n_classes))
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y] = 1.0
        for _ in range(params.n_estimators):
            prob = _softmax(raw)
            for c in range(n_classes):
                residual = onehot[:, c] - prob[:, c]
                pred = np.empty(n)
                tree = _fit_tree(X, residual, "regression", params.max_depth, mask,
                                 None, train_pred=pred)
                trees.append(_scale_leaves(tree, lr))
                raw[:, c] += lr * pred
    meta = EnsembleMeta(kind="gbt", n_estimators=params.n_estimators,
                        n_classes=n_classes, max_depth=params.max_depth)
    return trees, meta


def oversample_minority(data: Dataset, rng: np.random.Generator,
                        n_classes: Optional[int] = None) -> Dataset:
    """Resample every class (with replacement) up to the majority count."""
    y = np.asarray(data.labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=n_classes)
    if (counts == 0).any():
        missing = int(np.nonzero(counts == 0)[0][0])
        raise ValueError(f"class {missing} has no samples to oversample from")
    top = int(counts.max())
    extra_idx = []
    for c in range(n_classes):
        need = top - int(counts[c])
        if need:
            pool = np.nonzero(y == c)[0]
            extra_idx.append(rng.choice(pool, size=need, replace=True))
    if not extra_idx:
        return data
    idx = np.concatenate([np.arange(y.shape[0])] + extra_idx)
    return Dataset(features=data.features[idx], labels=data.labels[idx],
                   split=data.split)
