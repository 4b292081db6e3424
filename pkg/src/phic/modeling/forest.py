"""Random forest of unpruned entropy trees grown on bootstrap bags.

Each split examines a random subset of ``features_per_split`` inputs; if
none of them yields positive information gain, the remaining inputs are
tried in random order before the node is declared a leaf. A tree's output
is the positive-class frequency of the training rows in the reached leaf
and the forest averages those frequencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .._rng import derive_int, derive_rng
from ..features import FeatureTable
from .base import TrainedModel, check_trainable
from .encoding import Encoder


@numba.njit(cache=True)
def _uniform(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    z = x * np.uint64(2685821657736338717)
    return (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _binary_entropy(p):
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1.0 - p) * math.log2(1.0 - p))


@numba.njit(cache=True)
def _grow(X, y, rows, k_features, max_depth, seed):
    n = rows.shape[0]
    m = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    idx = rows.copy()
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    state = np.empty(1, np.uint64)
    state[0] = np.uint64(seed) * np.uint64(2654435761) + np.uint64(88172645463325252)
    feats = np.arange(m)

    n_nodes = 1
    sp = 0
    st_node[0], st_lo[0], st_hi[0], st_depth[0] = 0, 0, n, 0
    sp = 1
    while sp > 0:
        sp -= 1
        node, lo, hi, depth = st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp]
        cnt = hi - lo
        pos = 0
        for i in range(lo, hi):
            pos += y[idx[i]]
        value[node] = pos / cnt
        if pos == 0 or pos == cnt or cnt < 2 or (max_depth >= 0 and depth >= max_depth):
            continue
        for i in range(m - 1, 0, -1):
            j = int(_uniform(state) * (i + 1))
            tmp = feats[i]
            feats[i] = feats[j]
            feats[j] = tmp
        parent = _binary_entropy(pos / cnt)
        best_gain = 1e-12
        best_f = -1
        best_thr = 0.0
        seg = idx[lo:hi]
        for t in range(m):
            if t >= k_features and best_f >= 0:
                break
            f = feats[t]
            vals = np.empty(cnt)
            for i in range(cnt):
                vals[i] = X[seg[i], f]
            order = np.argsort(vals, kind="mergesort")
            if vals[order[0]] == vals[order[cnt - 1]]:
                continue
            cum = 0
            for i in range(cnt - 1):
                cum += y[seg[order[i]]]
                a = vals[order[i]]
                b = vals[order[i + 1]]
                if a < b:
                    nl = i + 1
                    nr = cnt - nl
                    e = (nl * _binary_entropy(cum / nl) + nr * _binary_entropy((pos - cum) / nr)) / cnt
                    gain = parent - e
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_thr = (a + b) / 2.0
        if best_f < 0:
            continue
        # partition idx[lo:hi] so rows with X <= thr come first
        i, j = lo, hi - 1
        while i <= j:
            if X[idx[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp] = n_nodes, lo, i, depth + 1
        sp += 1
        st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp] = n_nodes + 1, i, hi, depth + 1
        sp += 1
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@numba.njit(cache=True)
def _predict(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _predict(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                        self.left, self.right, self.value)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


def fit_tree(X, y, rows=None, features_per_split=None, max_depth=None, seed=0) -> Tree:
    """Grow one tree on ``rows`` of (X, y); ``rows`` may repeat (bootstrap)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    rows = np.arange(len(y)) if rows is None else np.ascontiguousarray(rows, dtype=np.int64)
    k = X.shape[1] if features_per_split is None else features_per_split
    depth = -1 if max_depth is None else max_depth
    return Tree(*_grow(X, y, rows, int(k), int(depth), int(seed)))


def default_features_per_split(n_inputs: int) -> int:
    return int(math.floor(math.log2(n_inputs))) + 1 if n_inputs > 0 else 1


@dataclass
class ForestModel(TrainedModel):
    trees: list = field(default_factory=list, repr=False)
    oob_error: float | None = None

    def _positive(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def params(self):
        return {"n_trees": len(self.trees), "n_nodes": [t.n_nodes for t in self.trees], "oob_error": self.oob_error}


def train_random_forest(
    table: FeatureTable,
    n_trees: int = 100,
    bag_fraction: float = 1.0,
    features_per_split: int | None = None,
    max_depth: int | None = None,
    bootstrap: bool = True,
    compute_oob: bool = False,
    seed: int = 0,
) -> ForestModel:
    check_trainable(table)
    enc = Encoder(dummies="full")
    X = enc.fit_transform(table)
    y = table.label.astype(np.int64)
    n = len(y)
    k = features_per_split or default_features_per_split(X.shape[1])
    bag = max(1, int(round(bag_fraction * n)))
    trees, bags = [], []
    for t in range(n_trees):
        rows = derive_rng(seed, "rf-bag", t).integers(0, n, bag) if bootstrap else np.arange(n)
        trees.append(fit_tree(X, y, rows, k, max_depth, derive_int(seed, "rf-tree", t)))
        bags.append(rows)
    oob = None
    if compute_oob and bootstrap:
        votes, hits = np.zeros(n), np.zeros(n)
        for tree, rows in zip(trees, bags):
            out = np.ones(n, dtype=bool)
            out[rows] = False
            if out.any():
                votes[out] += tree.predict(X[out])
                hits[out] += 1
        seen = hits > 0
        if seen.any():
            pred = (votes[seen] / hits[seen]) >= 0.5
            oob = float(np.mean(pred != y[seen].astype(bool)))
    return ForestModel(
        kind="RF",
        feature_schema=tuple(table.predictors),
        seed=seed,
        config={
            "n_trees": n_trees,
            "bag_fraction": bag_fraction,
            "features_per_split": k,
            "max_depth": max_depth,
            "bootstrap": bootstrap,
        },
        encoder=enc,
        trees=trees,
        oob_error=oob,
    )
