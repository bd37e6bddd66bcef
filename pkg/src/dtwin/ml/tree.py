"""Gini decision trees and bagged random forests.

Trees are stored flat: parallel arrays indexed by node id, children
referenced by index, ``feature == -1`` marking a leaf. A forest is the
concatenation of its trees plus a ``roots`` array, which is exactly the
layout the traversal kernel expects.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionMismatch, EmptyTrainingSet
from . import _kernels

TREE_ARRAYS = ("feature", "threshold", "left", "right", "value", "n_node_samples", "impurity")


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyTrainingSet("training set is empty")
    if y.shape != (X.shape[0],):
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
    return X, y


def _gini(c0, c1):
    n = c0 + c1
    if n == 0:
        return 0.0
    return 1.0 - (c0 * c0 + c1 * c1) / float(n * n)


def build_tree(X, y, sample_idx, *, max_depth, min_samples_split=2, max_features=None, rng=None):
    """Grow one tree on ``X[sample_idx]`` and return its flat arrays.

    ``max_features`` features are drawn per split; when none of them admits
    a split the remaining features are tried before giving up on the node.
    """
    d = X.shape[1]
    k = d if max_features is None else max(1, min(d, int(max_features)))
    all_feats = np.arange(d, dtype=np.int64)

    feature, threshold, left, right, value, counts, impurity = [], [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0)
        counts.append(0)
        impurity.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.ascontiguousarray(sample_idx, dtype=np.int64), 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = idx.shape[0]
        c1 = int(y[idx].sum())
        c0 = n - c1
        counts[node] = n
        impurity[node] = _gini(c0, c1)
        value[node] = 1 if c1 > c0 else 0
        if c0 == 0 or c1 == 0 or depth >= max_depth or n < min_samples_split:
            continue

        if k < d:
            perm = rng.permutation(d).astype(np.int64)
            f, thr, _ = _kernels.best_split(X, y, idx, perm[:k])
            if f < 0:
                f, thr, _ = _kernels.best_split(X, y, idx, perm[k:])
        else:
            f, thr, _ = _kernels.best_split(X, y, idx, all_feats)
        if f < 0:
            continue

        mask = X[idx, f] <= thr
        li, ri = new_node(), new_node()
        feature[node] = int(f)
        threshold[node] = float(thr)
        left[node] = li
        right[node] = ri
        # right pushed first so the left subtree is numbered first
        stack.append((ri, idx[~mask], depth + 1))
        stack.append((li, idx[mask], depth + 1))

    return {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "value": np.asarray(value, dtype=np.int64),
        "n_node_samples": np.asarray(counts, dtype=np.int64),
        "impurity": np.asarray(impurity, dtype=np.float64),
    }


def train_decision_tree(X, y, max_depth=16, seed=0, min_samples_split=2):
    """Single unbagged tree considering every feature at every split."""
    X, y = _check_xy(X, y)
    rng = np.random.default_rng(seed)
    tree = build_tree(
        X, y, np.arange(X.shape[0]), max_depth=max_depth, min_samples_split=min_samples_split, rng=rng
    )
    tree["roots"] = np.zeros(1, dtype=np.int64)
    return tree


def train_forest(X, y, *, n_estimators=100, max_depth=16, min_samples_split=2, seed=0):
    X, y = _check_xy(X, y)
    n, d = X.shape
    max_features = max(1, int(math.sqrt(d)))
    children = np.random.SeedSequence(seed).spawn(n_estimators)
    parts = []
    for ss in children:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, size=n)
        boot.sort()
        parts.append(
            build_tree(
                X,
                y,
                boot,
                max_depth=max_depth,
                min_samples_split=min_samples_split,
                max_features=max_features,
                rng=rng,
            )
        )
    return concat_trees(parts)


def concat_trees(trees):
    """Merge per-tree arrays into one forest, offsetting child indices."""
    out = {name: [] for name in TREE_ARRAYS}
    roots = []
    offset = 0
    for t in trees:
        roots.append(offset)
        for name in TREE_ARRAYS:
            arr = t[name]
            if name in ("left", "right"):
                arr = np.where(arr >= 0, arr + offset, -1)
            out[name].append(arr)
        offset += t["feature"].shape[0]
    forest = {name: np.concatenate(parts) for name, parts in out.items()}
    forest["roots"] = np.asarray(roots, dtype=np.int64)
    return forest


def split_forest(forest):
    """Inverse of :func:`concat_trees`; used for per-tree inspection."""
    roots = list(forest["roots"]) + [forest["feature"].shape[0]]
    trees = []
    for a, b in zip(roots[:-1], roots[1:]):
        t = {name: forest[name][a:b].copy() for name in TREE_ARRAYS}
        for name in ("left", "right"):
            t[name] = np.where(t[name] >= 0, t[name] - a, -1)
        t["roots"] = np.zeros(1, dtype=np.int64)
        trees.append(t)
    return trees


def forest_votes(forest, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _kernels.forest_votes(
        X,
        forest["feature"],
        forest["threshold"],
        forest["left"],
        forest["right"],
        forest["value"],
        forest["roots"],
    )


def tree_depth(tree):
    """Depth of the first tree in ``tree`` (root-only tree has depth 0)."""
    depth = {int(tree["roots"][0]): 0}
    best = 0
    stack = [int(tree["roots"][0])]
    while stack:
        node = stack.pop()
        if tree["feature"][node] < 0:
            continue
        for child in (int(tree["left"][node]), int(tree["right"][node])):
            depth[child] = depth[node] + 1
            best = max(best, depth[child])
            stack.append(child)
    return best
