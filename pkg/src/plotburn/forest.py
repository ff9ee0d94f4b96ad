"""Random Forest for binary burn classification with Gini importance.

Trees are stored as flat parallel arrays (feature, threshold, children, leaf
vote fractions) so batch prediction routes all rows level by level with numpy.
Scores are the fraction of trees whose leaf majority votes burned, not a
calibrated probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ForestError(ValueError):
    pass


class DegenerateModelError(ForestError):
    """Training data contains a single class."""


class SchemaMismatchError(ForestError):
    """Prediction input does not provide the model's feature schema."""


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 300
    max_features: int | str = "sqrt"   # per-split candidate count or "sqrt"
    min_leaf: int = 5
    max_depth: int | None = None
    seed: int = 0

    def resolve_max_features(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        k = int(self.max_features)
        if k < 1:
            raise ForestError("max_features must be >= 1")
        return min(k, n_features)


@dataclass
class Tree:
    """Flat node arrays; feature -1 marks a leaf, votes hold class fractions."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    votes: np.ndarray          # (n_nodes, 2), rows sum to 1 at leaves

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        """Hard majority vote of the landing leaf for each row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            f = self.feature[cur]
            go_left = X[idx, f] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] >= 0
        return (self.votes[node, 1] > self.votes[node, 0]).astype(np.int64)


@dataclass
class ForestModel:
    trees: list[Tree]
    schema: list[str]
    importance: np.ndarray     # per-feature Gini importance, sums to 1
    seed: int
    oob_accuracy: float | None = None
    params: ForestParams = field(default_factory=ForestParams)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _gini(c0, c1):
    n = c0 + c1
    return 1.0 - ((c0 / n) ** 2 + (c1 / n) ** 2)


def _best_split(X, y, idx, candidates, min_leaf):
    """(decrease, feature, threshold) of the best Gini split, or decrease 0."""
    n = idx.size
    y_node = y[idx]
    n1 = int(y_node.sum())
    n0 = n - n1
    parent = _gini(n0, n1)
    best_dec, best_f, best_thr = 0.0, -1, 0.0
    ks = np.arange(1, n)
    for f in candidates:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y_node[order]
        usable = (vs[1:] > vs[:-1]) & (ks >= min_leaf) & (n - ks >= min_leaf)
        if not usable.any():
            continue
        c1l = np.cumsum(ys)[:-1][usable]
        kl = ks[usable]
        c0l = kl - c1l
        kr = n - kl
        gl = _gini(c0l, c1l)
        gr = _gini(n0 - c0l, n1 - c1l)
        dec = parent - (kl * gl + kr * gr) / n
        j = int(np.argmax(dec))
        if dec[j] > best_dec + 1e-15:
            pos = int(kl[j])
            src = np.nonzero(usable)[0]
            vpos = int(src[j]) + 1
            best_dec = float(dec[j])
            best_f = int(f)
            best_thr = float((vs[vpos - 1] + vs[vpos]) / 2.0)
    return best_dec, best_f, best_thr


def _grow_tree(X, y, sample_idx, rng, params: ForestParams, n_total,
               importance_acc: np.ndarray) -> Tree:
    max_feat = params.resolve_max_features(X.shape[1])
    feature, threshold, left, right, votes = [], [], [], [], []

    def add_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        votes.append((0.0, 0.0))
        return len(feature) - 1

    root = add_node()
    stack = [(sample_idx, 0, root)]
    while stack:
        idx, depth, node = stack.pop()
        n = idx.size
        n1 = int(y[idx].sum())
        votes[node] = ((n - n1) / n, n1 / n)
        if (n1 == 0 or n1 == n or n < 2 * params.min_leaf
                or (params.max_depth is not None and depth >= params.max_depth)):
            continue
        candidates = np.sort(rng.permutation(X.shape[1])[:max_feat])
        dec, f, thr = _best_split(X, y, idx, candidates, params.min_leaf)
        if f < 0:
            continue
        importance_acc[f] += dec * n / n_total
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        nl, nr = add_node(), add_node()
        left[node], right[node] = nl, nr
        stack.append((idx[go_left], depth + 1, nl))
        stack.append((idx[~go_left], depth + 1, nr))

    return Tree(np.asarray(feature, dtype=np.int64),
                np.asarray(threshold, dtype=float),
                np.asarray(left, dtype=np.int64),
                np.asarray(right, dtype=np.int64),
                np.asarray(votes, dtype=float))


def train_forest(X: np.ndarray, y: np.ndarray, schema: list[str],
                 params: ForestParams = ForestParams()) -> ForestModel:
    """Bootstrap-sampled Gini trees; deterministic for a given seed.

    Importance is the impurity decrease summed per feature across all splits
    and trees, normalized to sum to 1. Out-of-bag accuracy is recorded when
    every class keeps at least one out-of-bag row.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ForestError("X must be (n_rows, n_features) aligned with y")
    if X.shape[1] != len(schema):
        raise ForestError("schema length does not match feature count")
    if np.isnan(X).any():
        raise ForestError("features must be imputed before training")
    if np.unique(y).size < 2:
        raise DegenerateModelError("training data contains a single class")

    n = X.shape[0]
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    importance = np.zeros(X.shape[1])
    trees = []
    oob_votes = np.zeros((n, 2))
    for t in range(params.n_trees):
        rng = np.random.Generator(np.random.PCG64(seeds[t]))
        sample = rng.integers(0, n, size=n)
        tree = _grow_tree(X, y, sample, rng, params, n, importance)
        trees.append(tree)
        oob = np.ones(n, dtype=bool)
        oob[sample] = False
        if oob.any():
            pred = tree.predict_class(X[oob])
            oob_votes[np.nonzero(oob)[0], pred] += 1

    total = importance.sum()
    if total > 0:
        importance /= total
    voted = oob_votes.sum(axis=1) > 0
    oob_accuracy = None
    if voted.any():
        oob_pred = (oob_votes[voted, 1] > oob_votes[voted, 0]).astype(np.int64)
        oob_accuracy = float((oob_pred == y[voted]).mean())
    return ForestModel(trees, list(schema), importance, params.seed,
                       oob_accuracy, params)


def predict_scores(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Fraction of trees voting burned, per row; values on a 1/n_trees lattice."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != len(model.schema):
        raise SchemaMismatchError(
            f"expected {len(model.schema)} features, got {X.shape[1]}")
    if np.isnan(X).any():
        raise ForestError("features must be imputed before prediction")
    votes = np.zeros(X.shape[0])
    for tree in model.trees:
        votes += tree.predict_class(X)
    return votes / model.n_trees


def row_vector(features: dict[str, float], schema: list[str]) -> np.ndarray:
    missing = [name for name in schema if name not in features]
    if missing:
        raise SchemaMismatchError(f"row is missing feature(s) {missing}")
    return np.array([float(features[name]) for name in schema])


def predict_score(model: ForestModel, features: dict[str, float]) -> float:
    return float(predict_scores(model, row_vector(features, model.schema)[None, :])[0])


def fit_impute_medians(X: np.ndarray) -> np.ndarray:
    """Per-feature training medians; all-missing columns fall back to 0."""
    X = np.asarray(X, dtype=float)
    medians = np.full(X.shape[1], 0.0)
    for j in range(X.shape[1]):
        col = X[:, j]
        col = col[np.isfinite(col)]
        if col.size:
            medians[j] = float(np.median(col))
    return medians


def apply_impute(X: np.ndarray, medians: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float).copy()
    bad = ~np.isfinite(X)
    if bad.any():
        X[bad] = np.broadcast_to(medians, X.shape)[bad]
    return X


def top_k_features(model: ForestModel, k: int) -> list[str]:
    """Feature names of the k largest importances, ties broken by schema order."""
    order = sorted(range(len(model.schema)),
                   key=lambda j: (-model.importance[j], j))
    return [model.schema[j] for j in order[:max(0, k)]]


FOREST_MAGIC = "plotburn-forest v1"


def save_forest(path, model: ForestModel) -> None:
    with open(path, "w") as fh:
        fh.write(FOREST_MAGIC + "\n")
        fh.write(f"seed {model.seed}\n")
        oob = "-" if model.oob_accuracy is None else repr(float(model.oob_accuracy))
        fh.write(f"oob {oob}\n")
        fh.write(f"features {len(model.schema)}\n")
        for name, imp in zip(model.schema, model.importance):
            fh.write(f"f {name} {float(imp)!r}\n")
        fh.write(f"trees {model.n_trees}\n")
        for tree in model.trees:
            fh.write(f"tree {tree.n_nodes}\n")
            for i in range(tree.n_nodes):
                fh.write(f"{tree.feature[i]} {float(tree.threshold[i])!r} "
                         f"{tree.left[i]} {tree.right[i]} "
                         f"{float(tree.votes[i, 0])!r} {float(tree.votes[i, 1])!r}\n")


def load_forest(path) -> ForestModel:
    with open(path) as fh:
        if fh.readline().strip() != FOREST_MAGIC:
            raise ForestError(f"{path}: not a forest file")
        seed = int(fh.readline().split()[1])
        oob_tok = fh.readline().split()[1]
        oob = None if oob_tok == "-" else float(oob_tok)
        n_features = int(fh.readline().split()[1])
        schema, importance = [], []
        for _ in range(n_features):
            _, name, imp = fh.readline().split()
            schema.append(name)
            importance.append(float(imp))
        n_trees = int(fh.readline().split()[1])
        trees = []
        for _ in range(n_trees):
            n_nodes = int(fh.readline().split()[1])
            feat = np.zeros(n_nodes, dtype=np.int64)
            thr = np.zeros(n_nodes)
            left = np.zeros(n_nodes, dtype=np.int64)
            right = np.zeros(n_nodes, dtype=np.int64)
            votes = np.zeros((n_nodes, 2))
            for i in range(n_nodes):
                parts = fh.readline().split()
                feat[i] = int(parts[0])
                thr[i] = float(parts[1])
                left[i] = int(parts[2])
                right[i] = int(parts[3])
                votes[i] = (float(parts[4]), float(parts[5]))
            trees.append(Tree(feat, thr, left, right, votes))
    return ForestModel(trees, schema, np.asarray(importance), seed, oob)
