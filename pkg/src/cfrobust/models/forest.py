"""Bagged CART trees with Gini splits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from cfrobust.core import Dataset
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier
from cfrobust.tags import ModelKind

logger = logging.getLogger(__name__)

_LEAF = -1


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf.

    Rows go left when ``x[feature] <= threshold``.  ``value`` is the class-1 fraction of
    the training rows that reached the node.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        for _ in range(self.depth):
            f = self.feature[node]
            inner = np.flatnonzero(f != _LEAF)
            if len(inner) == 0:
                break
            at = node[inner]
            go_left = x[inner, f[inner]] <= self.threshold[at]
            node[inner] = np.where(go_left, self.left[at], self.right[at])
        return node

    def predict_value(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]


def _gini(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    p = pos / n
    return 2.0 * p * (1.0 - p)


def best_split(
    x: np.ndarray, y: np.ndarray, features: np.ndarray, min_leaf: int
) -> tuple[int, float, float] | None:
    """Lowest weighted Gini split as ``(feature, threshold, impurity)``.

    Earlier features and lower thresholds win ties.  Thresholds are midpoints between
    consecutive distinct values.
    """
    n = len(y)
    best: tuple[int, float, float] | None = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        v, t = x[order, f], y[order]
        left_n = np.arange(1, n, dtype=float)
        left_pos = np.cumsum(t)[:-1].astype(float)
        right_n = n - left_n
        right_pos = t.sum() - left_pos
        ok = (v[:-1] < v[1:]) & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not ok.any():
            continue
        impurity = (left_n * _gini(left_pos, left_n) + right_n * _gini(right_pos, right_n)) / n
        impurity = np.where(ok, impurity, np.inf)
        i = int(np.argmin(impurity))
        if best is None or impurity[i] < best[2]:
            best = (int(f), float((v[i] + v[i + 1]) / 2.0), float(impurity[i]))
    return best


def grow_tree(
    x: np.ndarray,
    y: np.ndarray,
    *,
    max_depth: int,
    min_leaf: int,
    max_features: int,
    rng: np.random.Generator,
) -> DecisionTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node(rows: np.ndarray) -> int:
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    d = x.shape[1]
    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        yr = y[rows]
        if depth >= max_depth or len(rows) < 2 * min_leaf or yr.min() == yr.max():
            continue
        features = np.sort(rng.choice(d, size=max_features, replace=False))
        split = best_split(x[rows], yr, features, min_leaf)
        if split is None or split[2] >= _gini(np.array(yr.sum(), float), np.array(len(yr), float)):
            continue
        f, thr, _ = split
        goes_left = x[rows, f] <= thr
        lrows, rrows = rows[goes_left], rows[~goes_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))

    return DecisionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
        depth=max_depth,
    )


@dataclass(frozen=True, eq=False)
class RandomForest(Classifier):
    trees: tuple[DecisionTree, ...]

    kind: ClassVar[str] = ModelKind.RF

    def _proba(self, x: np.ndarray) -> np.ndarray:
        votes = np.zeros(x.shape[0])
        for tree in self.trees:
            votes += tree.predict_value(x) >= 0.5
        return votes / len(self.trees)


def fit_random_forest(
    train: Dataset,
    n_trees: int = 100,
    max_depth: int = 8,
    min_leaf: int = 5,
    seed: int = 0,
    *,
    bootstrap: bool = True,
    max_features: int | None = None,
) -> RandomForest:
    """Bagged Gini trees; each split looks at ``ceil(sqrt(d))`` random features by default."""
    if train.n == 0:
        raise ParameterError("training data is empty")
    if n_trees < 1 or max_depth < 0 or min_leaf < 1:
        raise ParameterError("need n_trees >= 1, max_depth >= 0 and min_leaf >= 1")
    d = train.d
    k = max_features if max_features is not None else math.ceil(math.sqrt(d))
    if not 1 <= k <= d:
        raise ParameterError(f"max_features must be in [1, {d}], got {k}")

    x, y = np.asarray(train.x), np.asarray(train.y)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, train.n, size=train.n) if bootstrap else np.arange(train.n)
        trees.append(
            grow_tree(
                x[rows], y[rows], max_depth=max_depth, min_leaf=min_leaf, max_features=k, rng=rng
            )
        )
    logger.debug("grew %d trees (max_depth=%d, max_features=%d)", n_trees, max_depth, k)
    return RandomForest(tuple(trees))
