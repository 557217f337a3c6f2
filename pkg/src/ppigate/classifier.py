"""Pairwise featurization and a from-scratch random-forest classifier.

The ranking predictor scores a pair by negated distance, which collapses
for homodimers (distance zero between identical embeddings). The symmetric
pairwise features below feed a random forest that keeps homodimer pairs
separable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import objective
from .data import make_rng
from .encoder import GaussianEmbedding
from .tensor import ContractError


class ClassifierError(ValueError):
    """The classifier cannot be fit or applied as requested."""


def featurize(a, b) -> np.ndarray:
    """Symmetric pair features.

    Gaussian embeddings: [|mu_a-mu_b| ; |sigma_a-sigma_b| ; mu_a*mu_b],
    length 3d. Point embeddings: [|z_a-z_b| ; z_a*z_b], length 2d.
    """
    if isinstance(a, GaussianEmbedding) != isinstance(b, GaussianEmbedding):
        raise ContractError("cannot featurize mixed embedding types")
    if isinstance(a, GaussianEmbedding):
        if a.mu.shape != b.mu.shape:
            raise ContractError(f"dimension mismatch: {a.mu.shape} vs {b.mu.shape}")
        return np.concatenate([np.abs(a.mu - b.mu), np.abs(a.sigma - b.sigma), a.mu * b.mu])
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([np.abs(a - b), a * b])


# --------------------------------------------------------------------------
# Decision trees


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - (p * p).sum())


def _best_split(X, y, feature_ids):
    """Best (feature, threshold) by Gini over midpoint thresholds, or None."""
    n = y.size
    parent = _gini(np.bincount(y, minlength=2))
    best = None  # (impurity, feature, threshold)
    for f in feature_ids:
        values = X[:, f]
        order = np.argsort(values, kind="mergesort")
        sv, sy = values[order], y[order]
        pos_left = np.cumsum(sy)
        total_pos = pos_left[-1]
        for cut in range(1, n):
            if sv[cut] == sv[cut - 1]:
                continue
            left_pos = pos_left[cut - 1]
            left = np.array([cut - left_pos, left_pos], dtype=np.float64)
            right = np.array([(n - cut) - (total_pos - left_pos), total_pos - left_pos])
            impurity = (cut * _gini(left) + (n - cut) * _gini(right)) / n
            if best is None or impurity < best[0] - 1e-15:
                best = (impurity, f, 0.5 * (sv[cut] + sv[cut - 1]))
    if best is None or best[0] >= parent - 1e-15:
        return None
    return best[1], best[2]


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    fraction: float = 0.0  # leaf positive fraction

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _grow(X, y, rng, n_sub, depth, max_depth) -> TreeNode:
    if y.size < 2 or len(set(y.tolist())) == 1 or (max_depth is not None and depth >= max_depth):
        return TreeNode(fraction=float(y.mean()))
    feature_ids = rng.choice(X.shape[1], size=n_sub, replace=False)
    split = _best_split(X, y, feature_ids)
    if split is None:
        return TreeNode(fraction=float(y.mean()))
    f, thr = split
    mask = X[:, f] <= thr
    return TreeNode(
        feature=int(f),
        threshold=float(thr),
        left=_grow(X[mask], y[mask], rng, n_sub, depth + 1, max_depth),
        right=_grow(X[~mask], y[~mask], rng, n_sub, depth + 1, max_depth),
        fraction=float(y.mean()),
    )


def _tree_fraction(node: TreeNode, x: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.fraction


@dataclass
class Forest:
    trees: list[TreeNode]
    n_features: int
    n_trees: int
    max_depth: int | None
    seed: int


def rf_fit(features, labels, n_trees: int = 100, max_depth: int | None = None, seed: int = 0) -> Forest:
    """Bootstrap-aggregated Gini trees with sqrt-feature subsampling."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size or X.shape[0] < 2:
        raise ClassifierError(f"need >= 2 samples of equal count, got {X.shape} / {y.shape}")
    if len(set(y.tolist())) < 2:
        raise ClassifierError("training data contains a single class")
    n, d = X.shape
    n_sub = max(1, int(np.sqrt(d)))
    trees = []
    for t in range(n_trees):
        rng = make_rng(seed, "tree", t)
        idx = rng.integers(0, n, size=n)
        trees.append(_grow(X[idx], y[idx], rng, n_sub, 0, max_depth))
    return Forest(trees, d, n_trees, max_depth, seed)


def rf_predict_proba(forest: Forest, feature) -> float:
    """Mean leaf positive-fraction over trees; always inside [0, 1]."""
    x = np.asarray(feature, dtype=np.float64)
    if x.shape != (forest.n_features,):
        raise ContractError(f"feature length {x.shape} != trained {forest.n_features}")
    return float(np.mean([_tree_fraction(t, x) for t in forest.trees]))


def rf_predict_proba_many(forest: Forest, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    return np.array([rf_predict_proba(forest, row) for row in X])


DEFAULT_GRID = tuple(
    (n_trees, max_depth) for n_trees in (100, 300) for max_depth in (8, 16, None)
)


def grid_search_forest(
    train_X, train_y, val_X, val_y, seed: int = 0, grid=DEFAULT_GRID
) -> tuple[Forest, list[tuple[int, int | None, float]]]:
    """Fit every grid config, keep the best validation AUROC.

    Ties go to the smaller forest: fewer trees first, then shallower depth.
    """
    from .evalkit import auroc

    def size_key(n_trees, max_depth):
        return (n_trees, max_depth if max_depth is not None else np.inf)

    results = []
    best = None
    for n_trees, max_depth in sorted(grid, key=lambda g: size_key(*g)):
        forest = rf_fit(train_X, train_y, n_trees=n_trees, max_depth=max_depth, seed=seed)
        score = auroc(rf_predict_proba_many(forest, val_X), val_y)
        results.append((n_trees, max_depth, score))
        if best is None or score > best[0] + 1e-12:
            best = (score, forest)
    return best[1], results


# --------------------------------------------------------------------------
# Pair prediction front end


def predict_pair(mode: str, model, a, b) -> float:
    """Score a pair of embeddings.

    ``ranking`` returns the negated distance (higher means more likely to
    interact); ``classifier`` returns the forest probability for the
    symmetric pair features. Both are exactly symmetric in (a, b).
    """
    if mode == "ranking":
        return -objective.pair_energy(a, b)
    if mode == "classifier":
        if model is None:
            raise ClassifierError("classifier mode requires a fitted forest")
        return rf_predict_proba(model, featurize(a, b))
    raise ValueError(f"unknown prediction mode {mode!r}")


# --------------------------------------------------------------------------
# Forest (de)serialization for the checkpoint container


def forest_to_json(forest: Forest) -> dict:
    def node_to_json(node: TreeNode):
        if node.is_leaf:
            return {"fraction": node.fraction}
        return {
            "feature": node.feature,
            "threshold": node.threshold,
            "left": node_to_json(node.left),
            "right": node_to_json(node.right),
        }

    return {
        "kind": "random_forest",
        "version": 1,
        "n_features": forest.n_features,
        "n_trees": forest.n_trees,
        "max_depth": forest.max_depth,
        "seed": forest.seed,
        "trees": [node_to_json(t) for t in forest.trees],
    }


def forest_from_json(blob: dict) -> Forest:
    if blob.get("kind") != "random_forest" or blob.get("version") != 1:
        raise ClassifierError("unrecognized forest section in checkpoint")

    def node_from_json(d) -> TreeNode:
        if "feature" not in d:
            return TreeNode(fraction=float(d["fraction"]))
        return TreeNode(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=node_from_json(d["left"]),
            right=node_from_json(d["right"]),
        )

    return Forest(
        trees=[node_from_json(t) for t in blob["trees"]],
        n_features=int(blob["n_features"]),
        n_trees=int(blob["n_trees"]),
        max_depth=blob["max_depth"],
        seed=int(blob["seed"]),
    )
