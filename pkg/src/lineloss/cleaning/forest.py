"""Bagged regression trees with axis-aligned splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError


@dataclass
class RegressionTree:
    feature: np.ndarray      # split feature per node, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray        # bootstrap rows that reached the node

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = x[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)


def _best_split(x, y, idx, features, min_leaf):
    n = idx.size
    best = (np.inf, -1, 0.0)
    ys_all = y[idx]
    for f in features:
        xs = x[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        ys = ys_all[order]
        cs = np.cumsum(ys)
        cs2 = np.cumsum(ys * ys)
        left_n = np.arange(min_leaf, n - min_leaf + 1)
        if left_n.size == 0:
            continue
        valid = xs[left_n - 1] < xs[left_n]
        if not valid.any():
            continue
        left_n = left_n[valid]
        sl, sl2 = cs[left_n - 1], cs2[left_n - 1]
        sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
        sse = (sl2 - sl * sl / left_n) + (sr2 - sr * sr / (n - left_n))
        k = int(np.argmin(sse))
        if sse[k] < best[0]:
            i = left_n[k]
            best = (float(sse[k]), int(f), 0.5 * (xs[i - 1] + xs[i]))
    return best


def fit_tree(x: np.ndarray, y: np.ndarray, rows: np.ndarray, rng: np.random.Generator,
             max_depth: int = 10, min_leaf: int = 5, max_features: int | None = None) -> RegressionTree:
    """Grow one tree on ``rows`` (may repeat, e.g. a bootstrap sample)."""
    d = x.shape[1]
    m = d if max_features is None else max(1, min(d, max_features))
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        count.append(int(idx.size))
        return len(feature) - 1

    stack = [(new_node(rows), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or idx.size < 2 * min_leaf:
            continue
        yi = y[idx]
        parent_sse = float(((yi - yi.mean()) ** 2).sum())
        if parent_sse <= 1e-18:
            continue
        order = rng.permutation(d)
        sse, f, thr = _best_split(x, y, idx, order[:m], min_leaf)
        if f < 0 and m < d:
            sse, f, thr = _best_split(x, y, idx, order[m:], min_leaf)
        if f < 0 or sse >= parent_sse:
            continue
        go_left = x[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          np.array(value), np.array(count, dtype=np.int64))


@dataclass
class RegressionForest:
    trees: list = field(default_factory=list)
    n_trees: int = 50
    max_depth: int = 10
    min_leaf: int = 5

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        return np.mean([t.predict(x) for t in self.trees], axis=0)


def forest_fit(x, y, n_trees: int = 50, max_depth: int = 10, min_leaf: int = 5,
               max_features: int | str | None = "third", seed: int = 0) -> RegressionForest:
    """Bootstrap-bagged trees with d/3 candidate features per split ("sqrt" also accepted).

    Tree structure is grown on the bootstrap sample; leaf values are then
    re-estimated as the mean of all training rows routed to each leaf.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64)
    n, d = x.shape
    if n == 0 or n < min_leaf:
        raise ContractError(f"forest needs at least min_leaf={min_leaf} training rows, got {n}")
    if len(y) != n:
        raise ContractError("x and y row counts differ")
    if np.isnan(x).any() or np.isnan(y).any():
        raise ContractError("forest inputs must not contain missing cells")
    if max_features == "third":
        mf = max(1, d // 3)
    elif max_features == "sqrt":
        mf = max(1, int(np.sqrt(d)))
    else:
        mf = max_features
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, size=n)
        tree = fit_tree(x, y, boot, rng, max_depth, min_leaf, mf)
        leaf_of = tree.apply(x)
        sums = np.bincount(leaf_of, weights=y, minlength=tree.value.size)
        cnts = np.bincount(leaf_of, minlength=tree.value.size)
        tree.value = np.where(cnts > 0, sums / np.maximum(cnts, 1), tree.value)
        trees.append(tree)
    return RegressionForest(trees, n_trees, max_depth, min_leaf)


def forest_predict(f: RegressionForest, x) -> np.ndarray:
    return f.predict(x)
