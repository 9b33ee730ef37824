"""Regression tree ensembles: random forest and least-squares gradient boosting.

Trees are grown greedily by variance reduction with midpoint thresholds and
keep per-node sample counts and impurities so impurity-based importance can
be computed later. All randomness (bootstrap draws, per-node feature
subsets) comes from substreams keyed by (seed, tree index), so a fit is
fully determined by (data, params, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .seeding import substream


class ModelKind(Enum):
    RANDOM_FOREST = "rf"
    GRADIENT_BOOST = "gbt"


@dataclass(frozen=True)
class EnsembleParams:
    """Hyperparameters shared by both ensemble kinds.

    features_per_split: None = all features; an int is an absolute count; a
    float in (0, 1] is a fraction of the feature count (floor, at least 1).
    """

    kind: ModelKind = ModelKind.RANDOM_FOREST
    n_estimators: int = 100
    max_depth: int = 8
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    features_per_split: float | int | None = None
    learning_rate: float = 0.1
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError(f"n_estimators must be >= 1, got {self.n_estimators}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise ValueError(f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.kind is ModelKind.GRADIENT_BOOST and not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")


@dataclass
class TreeNode:
    n_samples: int
    impurity: float  # variance of the node's targets
    value: float     # mean of the node's targets
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()


class _FlatTree:
    """Array form of a fitted tree for vectorized prediction."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, root: TreeNode):
        feature: list[int] = []
        threshold: list[float] = []
        left: list[int] = []
        right: list[int] = []
        value: list[float] = []

        def visit(node: TreeNode) -> int:
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(node.value)
            if not node.is_leaf:
                feature[i] = node.feature
                threshold[i] = node.threshold
                left[i] = visit(node.left)
                right[i] = visit(node.right)
            return i

        visit(root)
        self.feature = np.array(feature, dtype=np.intp)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=np.intp)
        self.right = np.array(right, dtype=np.intp)
        self.value = np.array(value)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat >= 0)
            if active.size == 0:
                return self.value[node]
            cur = node[active]
            go_left = X[active, feat[active]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])


class _FlatForest:
    """All trees of an ensemble concatenated for one-pass batched routing."""

    __slots__ = ("roots", "feature", "threshold", "left", "right", "value")

    def __init__(self, flats: list[_FlatTree]):
        sizes = np.array([len(f.feature) for f in flats])
        offsets = np.concatenate(([0], np.cumsum(sizes[:-1]))).astype(np.intp)
        self.roots = offsets
        self.feature = np.concatenate([f.feature for f in flats])
        self.threshold = np.concatenate([f.threshold for f in flats])
        self.left = np.concatenate([f.left + off for f, off in zip(flats, offsets)])
        self.right = np.concatenate([f.right + off for f, off in zip(flats, offsets)])
        self.value = np.concatenate([f.value for f in flats])

    def predict_sum(self, X: np.ndarray) -> np.ndarray:
        """Sum of all per-tree predictions for each row."""
        n = len(X)
        node = np.broadcast_to(self.roots, (n, len(self.roots))).copy()
        rows = np.arange(n)[:, None]
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node].sum(axis=1)
            x = X[rows, np.where(internal, feat, 0)]
            go_left = x <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)


@dataclass
class TreeEnsemble:
    """A fitted forest or boosting stack; immutable after fitting."""

    kind: ModelKind
    params: EnsembleParams
    trees: list[TreeNode]
    n_features: int
    feature_names: tuple[str, ...] | None = None
    base_value: float = 0.0
    training_mse: tuple[float, ...] = ()  # boosting only: per-stage train MSE
    _flat: list[_FlatTree] = field(default_factory=list, repr=False)
    _forest: "_FlatForest | None" = field(default=None, repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got shape {X.shape}")
        if self._forest is None:
            self._forest = _FlatForest(self._flat)
        total = self._forest.predict_sum(X)
        if self.kind is ModelKind.RANDOM_FOREST:
            return total / len(self._flat)
        return self.base_value + self.params.learning_rate * total

    def per_tree_predictions(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.array([flat.predict(X) for flat in self._flat])

    def predict_tree(self, tree_index: int, X: np.ndarray) -> np.ndarray:
        return self._flat[tree_index].predict(np.asarray(X, dtype=np.float64))

    def tree_feature_sets(self) -> list[np.ndarray]:
        """Feature indices each tree actually splits on."""
        return [np.unique(f.feature[f.feature >= 0]) for f in self._flat]

    def combine_tree_total(self, total: np.ndarray) -> np.ndarray:
        """Predictions from a precomputed sum of per-tree outputs."""
        if self.kind is ModelKind.RANDOM_FOREST:
            return total / len(self._flat)
        return self.base_value + self.params.learning_rate * total

    def summary(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_trees": len(self.trees),
            "max_tree_depth": max(t.depth() for t in self.trees),
            "total_leaves": sum(t.n_leaves() for t in self.trees),
            "params": {
                "n_estimators": self.params.n_estimators,
                "max_depth": self.params.max_depth,
                "min_samples_split": self.params.min_samples_split,
                "min_samples_leaf": self.params.min_samples_leaf,
                "features_per_split": self.params.features_per_split,
                "learning_rate": self.params.learning_rate if self.kind is ModelKind.GRADIENT_BOOST else None,
                "bootstrap": self.params.bootstrap if self.kind is ModelKind.RANDOM_FOREST else None,
            },
        }


def _resolve_features_per_split(setting: float | int | None, n_features: int) -> int:
    if setting is None:
        return n_features
    if isinstance(setting, (int, np.integer)):
        if setting < 1:
            raise ValueError(f"features_per_split count must be >= 1, got {setting}")
        return min(int(setting), n_features)
    frac = float(setting)
    if not 0.0 < frac <= 1.0:
        raise ValueError(f"features_per_split fraction must be in (0, 1], got {frac}")
    return max(1, min(n_features, int(frac * n_features)))


def _check_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if y.ndim != 1 or len(y) != len(X):
        raise ValueError(f"y length {y.shape} does not match X rows {len(X)}")
    if len(y) < 1:
        raise ValueError("need at least one sample")
    return X, y


def _best_split_sorted(xs: np.ndarray, ys: np.ndarray, min_leaf: int):
    """Best (local feature, split position, threshold) over sorted columns.

    xs/ys hold each candidate's values sorted ascending, ys centered on the
    node mean, so the variance reduction of a split collapses to
    (sum of left ys)^2 * n / (n_l * n_r). Ties break toward the earlier
    candidate column, then the smaller split position, by scanning the gain
    matrix feature-major.
    """
    n = len(ys)
    cy = np.cumsum(ys, axis=0)
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    weight = n / (nl * (n - nl))
    sums_l = cy[:-1]
    gain = sums_l * sums_l * weight
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        k = min_leaf
        valid[:k - 1] = False
        valid[len(valid) - (k - 1):] = False
    gain[~valid] = -np.inf
    flat = np.ravel(gain.T)  # feature-major scan
    best = int(np.argmax(flat))
    if flat[best] <= 0.0 or not np.isfinite(flat[best]):
        return None
    local_feat, pos = divmod(best, n - 1)
    threshold = 0.5 * (xs[pos, local_feat] + xs[pos + 1, local_feat])
    return local_feat, pos, float(threshold)


def _grow(X: np.ndarray, y: np.ndarray, sorted_idx: np.ndarray, depth: int,
          params: EnsembleParams, rng: np.random.Generator, m: int) -> TreeNode:
    """Grow one node; sorted_idx[:, f] lists the node's rows sorted by feature f.

    Children partition the parent's sorted columns instead of re-sorting,
    so each level costs O(n * p) after the single O(n log n * p) root sort.
    """
    n = sorted_idx.shape[0]
    y_node = y[sorted_idx[:, 0]]
    mean = float(y_node.mean())
    centered = y_node - mean
    sse = float(centered @ centered)
    node = TreeNode(n_samples=n, impurity=sse / n, value=mean)
    if (depth >= params.max_depth or n < params.min_samples_split
            or n < 2 * params.min_samples_leaf or np.ptp(y_node) == 0.0):
        return node

    p = X.shape[1]
    if m >= p:
        candidates = np.arange(p)
    else:
        candidates = np.sort(rng.choice(p, size=m, replace=False))
    si = sorted_idx[:, candidates]
    xs = X[si, candidates[None, :]]
    ys = y[si] - mean
    found = _best_split_sorted(xs, ys, params.min_samples_leaf)
    if found is None:
        return node
    local_feat, pos, threshold = found
    node.feature = int(candidates[local_feat])
    node.threshold = threshold

    in_left = np.zeros(len(y), dtype=bool)
    in_left[si[:pos + 1, local_feat]] = True
    sel = in_left[sorted_idx]
    sorted_t = sorted_idx.T
    left_sorted = sorted_t[sel.T].reshape(p, pos + 1).T
    right_sorted = sorted_t[~sel.T].reshape(p, n - pos - 1).T
    node.left = _grow(X, y, left_sorted, depth + 1, params, rng, m)
    node.right = _grow(X, y, right_sorted, depth + 1, params, rng, m)
    return node


def fit_tree(X: np.ndarray, y: np.ndarray, params: EnsembleParams,
             rng: np.random.Generator) -> TreeNode:
    """Grow one CART regression tree; rng drives per-node feature subsets."""
    X, y = _check_xy(X, y)
    m = _resolve_features_per_split(params.features_per_split, X.shape[1])
    sorted_idx = np.argsort(X, axis=0).astype(np.int32)
    return _grow(X, y, sorted_idx, 0, params, rng, m)


def fit_forest(X: np.ndarray, y: np.ndarray, params: EnsembleParams, seed: int,
               feature_names: Sequence[str] | None = None) -> TreeEnsemble:
    """Random forest: trees on bootstrap resamples, prediction = tree mean."""
    X, y = _check_xy(X, y)
    if params.kind is not ModelKind.RANDOM_FOREST:
        params = replace(params, kind=ModelKind.RANDOM_FOREST)
    n = len(y)
    trees = []
    for i in range(params.n_estimators):
        rng = substream(seed, "tree", i)
        if params.bootstrap:
            rows = rng.integers(0, n, size=n)
            trees.append(fit_tree(X[rows], y[rows], params, rng))
        else:
            trees.append(fit_tree(X, y, params, rng))
    return TreeEnsemble(
        kind=ModelKind.RANDOM_FOREST, params=params, trees=trees,
        n_features=X.shape[1],
        feature_names=tuple(feature_names) if feature_names is not None else None,
        _flat=[_FlatTree(t) for t in trees],
    )


def fit_gbt(X: np.ndarray, y: np.ndarray, params: EnsembleParams, seed: int,
            feature_names: Sequence[str] | None = None) -> TreeEnsemble:
    """Least-squares gradient boosting on depth-limited trees.

    Stage k fits the current residuals; prediction is the training mean plus
    learning_rate times the sum of tree outputs. Training MSE per stage is
    recorded and is non-increasing by construction.
    """
    X, y = _check_xy(X, y)
    if params.kind is not ModelKind.GRADIENT_BOOST:
        params = replace(params, kind=ModelKind.GRADIENT_BOOST)
    base = float(y.mean())
    residual = y - base
    trees = []
    flats = []
    stage_mse = []
    for i in range(params.n_estimators):
        rng = substream(seed, "stage", i)
        tree = fit_tree(X, residual, params, rng)
        flat = _FlatTree(tree)
        residual = residual - params.learning_rate * flat.predict(X)
        trees.append(tree)
        flats.append(flat)
        stage_mse.append(float(np.mean(residual * residual)))
    return TreeEnsemble(
        kind=ModelKind.GRADIENT_BOOST, params=params, trees=trees,
        n_features=X.shape[1],
        feature_names=tuple(feature_names) if feature_names is not None else None,
        base_value=base, training_mse=tuple(stage_mse), _flat=flats,
    )


def fit_model(X: np.ndarray, y: np.ndarray, params: EnsembleParams, seed: int,
              feature_names: Sequence[str] | None = None) -> TreeEnsemble:
    if params.kind is ModelKind.RANDOM_FOREST:
        return fit_forest(X, y, params, seed, feature_names)
    return fit_gbt(X, y, params, seed, feature_names)


def predict(model: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    return model.predict(X)


def mse(y: np.ndarray, yhat: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1 or len(y) < 1:
        raise ValueError(f"mse needs equal-length 1-D arrays, got {y.shape} vs {yhat.shape}")
    diff = y - yhat
    return float(np.mean(diff * diff))


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

@dataclass
class CVResult:
    candidates: list[EnsembleParams]
    fold_mses: list[list[float]]
    mean_mses: list[float]
    best_index: int

    @property
    def best_params(self) -> EnsembleParams:
        return self.candidates[self.best_index]


def chronological_folds(n: int, k: int) -> list[np.ndarray]:
    """k contiguous blocks of row indices, in time order, no shuffling."""
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    return list(np.array_split(np.arange(n), k))


def grid_search_cv(X: np.ndarray, y: np.ndarray, grid: Sequence[EnsembleParams],
                   k: int = 5, seed: int = 0) -> CVResult:
    """Score each candidate by mean held-out MSE over k chronological folds.

    The minimum mean MSE wins; ties go to the earlier candidate in grid
    order. Each (candidate, fold) fit draws from its own seed substream.
    """
    X, y = _check_xy(X, y)
    if not grid:
        raise ValueError("empty parameter grid")
    folds = chronological_folds(len(y), k)
    fold_mses: list[list[float]] = []
    for ci, params in enumerate(grid):
        scores = []
        for fi, fold in enumerate(folds):
            train = np.setdiff1d(np.arange(len(y)), fold)
            model = fit_model(X[train], y[train], params, _cv_seed(seed, ci, fi))
            scores.append(mse(y[fold], model.predict(X[fold])))
        fold_mses.append(scores)
    mean_mses = [float(np.mean(s)) for s in fold_mses]
    best_index = int(np.argmin(mean_mses))  # first minimum
    return CVResult(list(grid), fold_mses, mean_mses, best_index)


def _cv_seed(seed: int, candidate_index: int, fold_index: int) -> int:
    rng = substream(seed, "cv", candidate_index, fold_index)
    return int(rng.integers(0, 2 ** 63 - 1))


def default_rf_grid() -> list[EnsembleParams]:
    grid = []
    for n_estimators in (100, 300):
        for max_depth in (4, 8, 16):
            for min_samples_split in (2, 10):
                for features_per_split in (1 / 3, None):
                    grid.append(EnsembleParams(
                        kind=ModelKind.RANDOM_FOREST, n_estimators=n_estimators,
                        max_depth=max_depth, min_samples_split=min_samples_split,
                        features_per_split=features_per_split))
    return grid


def default_gbt_grid() -> list[EnsembleParams]:
    grid = []
    for n_estimators in (100, 300):
        for max_depth in (4, 8, 16):
            for min_samples_split in (2, 10):
                for learning_rate in (0.05, 0.1):
                    grid.append(EnsembleParams(
                        kind=ModelKind.GRADIENT_BOOST, n_estimators=n_estimators,
                        max_depth=max_depth, min_samples_split=min_samples_split,
                        learning_rate=learning_rate, bootstrap=False))
    return grid
