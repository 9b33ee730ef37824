"""Feature-importance evaluators: Pearson correlation, impurity-based
importance (MDI), permutation importance (PFI), and Shapley values.

Shapley attributions use the interventional value function: v(S) is the
mean model output over background rows with the features in S pinned to the
explained instance. An exact enumerator covers small feature counts and
doubles as the oracle for the permutation-sampling estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .models import TreeEnsemble, mse
from .seeding import substream


class ConstantColumnError(ValueError):
    """Pearson correlation is undefined for a constant column."""


@dataclass
class ImportanceReport:
    method: str
    scores: dict[str, float]
    metadata: dict = field(default_factory=dict)

    @property
    def ranking(self) -> list[str]:
        """Features by descending score; ties by ascending name."""
        return sorted(self.scores, key=lambda f: (-self.scores[f], f))

    def rank_of(self, feature: str) -> int:
        """1-based position in the ranking."""
        return self.ranking.index(feature) + 1

    def to_csv(self) -> str:
        lines = ["feature,score,rank,method"]
        for rank, feature in enumerate(self.ranking, start=1):
            lines.append(f"{feature},{self.scores[feature]!r},{rank},{self.method}")
        return "\n".join(lines) + "\n"


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError(f"pearson needs equal-length 1-D arrays of >= 2, got {x.shape} vs {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise ConstantColumnError("correlation undefined for a constant column")
    r = float(xc @ yc) / (sx * sy)
    return max(-1.0, min(1.0, r))


def pearson_abs(x: np.ndarray, y: np.ndarray) -> float:
    """|r|, treating constant columns as 0 for pipeline use."""
    try:
        return abs(pearson(x, y))
    except ConstantColumnError:
        return 0.0


def pearson_report(features: Mapping[str, np.ndarray], target: np.ndarray) -> ImportanceReport:
    scores = {name: pearson_abs(col, target) for name, col in features.items()}
    return ImportanceReport("pearson", scores, {"absolute": True})


# ---------------------------------------------------------------------------
# MDI
# ---------------------------------------------------------------------------

def mdi(model: TreeEnsemble) -> ImportanceReport:
    """Impurity-decrease importance from the retained node statistics.

    Each split credits its feature with (node samples / root samples) times
    the impurity decrease; credits are summed per tree, averaged over the
    ensemble, and normalized to sum 1.
    """
    if not model.trees:
        raise ValueError("model has no fitted trees")
    p = model.n_features
    total = np.zeros(p)
    for root in model.trees:
        credit = np.zeros(p)
        stack = [root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                continue
            if node.impurity is None or node.left.n_samples + node.right.n_samples != node.n_samples:
                raise ValueError("model is missing per-node statistics")
            weighted_child = (node.left.n_samples * node.left.impurity
                              + node.right.n_samples * node.right.impurity) / node.n_samples
            credit[node.feature] += (node.n_samples / root.n_samples) * (node.impurity - weighted_child)
            stack.append(node.right)
            stack.append(node.left)
        total += credit
    total /= len(model.trees)
    s = total.sum()
    if s > 0:
        total = total / s
    names = _names(model, p)
    return ImportanceReport("mdi", {n: float(v) for n, v in zip(names, total)},
                            {"kind": model.kind.value, "n_trees": len(model.trees)})


# ---------------------------------------------------------------------------
# PFI
# ---------------------------------------------------------------------------

def pfi(model: TreeEnsemble, X: np.ndarray, y: np.ndarray, repeats: int = 5,
        seed: int = 0, feature_names: Sequence[str] | None = None) -> ImportanceReport:
    """Mean MSE increase when one column at a time is randomly permuted.

    Each (feature, repeat) permutation comes from its own substream keyed by
    the feature name, so scores do not depend on column order.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_features = getattr(model, "n_features", X.shape[1] if X.ndim == 2 else 0)
    if X.ndim != 2 or X.shape[1] != n_features or len(y) != len(X):
        raise ValueError(f"X/y shapes {X.shape}/{y.shape} do not match model with {n_features} features")
    names = list(feature_names) if feature_names is not None else list(_names(model, X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length does not match X columns")
    n = len(y)
    scores = {}
    X_work = X.copy()
    if isinstance(model, TreeEnsemble):
        # Permuting column j only disturbs trees that split on j, so re-route
        # those and reuse the cached outputs of the rest. A feature no tree
        # reads scores exactly 0 without any prediction at all.
        per_tree = model.per_tree_predictions(X)
        total = per_tree.sum(axis=0)
        baseline = mse(y, model.combine_tree_total(total))
        trees_by_feature: dict[int, list[int]] = {}
        for t, feats in enumerate(model.tree_feature_sets()):
            for f in feats:
                trees_by_feature.setdefault(int(f), []).append(t)
        for j, name in enumerate(names):
            affected = trees_by_feature.get(j, [])
            if not affected:
                scores[name] = 0.0
                continue
            unaffected_total = total - per_tree[affected].sum(axis=0)
            deltas = []
            for r in range(repeats):
                perm = substream(seed, "pfi", name, r).permutation(n)
                X_work[:, j] = X[perm, j]
                new_total = unaffected_total + sum(model.predict_tree(t, X_work) for t in affected)
                deltas.append(mse(y, model.combine_tree_total(new_total)) - baseline)
            X_work[:, j] = X[:, j]
            scores[name] = float(np.mean(deltas))
    else:
        baseline = mse(y, model.predict(X))
        for j, name in enumerate(names):
            deltas = []
            for r in range(repeats):
                perm = substream(seed, "pfi", name, r).permutation(n)
                X_work[:, j] = X[perm, j]
                deltas.append(mse(y, model.predict(X_work)) - baseline)
            X_work[:, j] = X[:, j]
            scores[name] = float(np.mean(deltas))
    return ImportanceReport("pfi", scores, {"repeats": repeats, "seed": seed,
                                            "baseline_mse": baseline})


# ---------------------------------------------------------------------------
# Shapley values
# ---------------------------------------------------------------------------

EXACT_MAX_FEATURES = 12


@dataclass
class ShapleyResult:
    feature_names: tuple[str, ...]
    attributions: np.ndarray        # (n_explained, n_features)
    base_value: float               # v(empty set): mean background prediction
    report: ImportanceReport        # global mean |attribution| per feature
    stderr: np.ndarray | None = None  # sampled estimator only


def shapley_exact(model, X_background: np.ndarray, X_explain: np.ndarray,
                  feature_names: Sequence[str] | None = None) -> ShapleyResult:
    """Exact Shapley attributions by full coalition enumeration (p <= 12)."""
    X_bg, X_ex, names = _check_shapley_inputs(model, X_background, X_explain, feature_names)
    p = X_bg.shape[1]
    if p > EXACT_MAX_FEATURES:
        raise ValueError(
            f"{p} features require 2^{p} coalitions; use shapley_sampled for p > {EXACT_MAX_FEATURES}")
    n_masks = 1 << p
    weights = _coalition_weights(p)
    bits = (np.arange(n_masks)[:, None] >> np.arange(p)[None, :]) & 1  # (masks, p)
    member = bits.astype(bool)
    sizes = member.sum(axis=1)

    nb = len(X_bg)
    attributions = np.zeros((len(X_ex), p))
    base_value = float(np.mean(model.predict(X_bg)))
    for i, x in enumerate(X_ex):
        batch = np.where(member[:, None, :], x[None, None, :], X_bg[None, :, :])
        values = model.predict(batch.reshape(n_masks * nb, p)).reshape(n_masks, nb).mean(axis=1)
        for j in range(p):
            bit = 1 << j
            without = np.flatnonzero((np.arange(n_masks) & bit) == 0)
            gains = values[without | bit] - values[without]
            attributions[i, j] = float(np.sum(weights[sizes[without]] * gains))
    report = _global_report(names, attributions, {"estimator": "exact",
                                                  "n_background": nb,
                                                  "n_explained": len(X_ex)})
    return ShapleyResult(tuple(names), attributions, base_value, report)


def shapley_sampled(model, X_background: np.ndarray, X_explain: np.ndarray,
                    n_permutations: int = 2000, seed: int = 0,
                    feature_names: Sequence[str] | None = None) -> ShapleyResult:
    """Permutation-sampling Shapley estimate with per-feature standard errors.

    Each sampled feature ordering contributes one marginal gain per feature;
    the estimate is their mean. The same orderings are shared by all
    explained rows.
    """
    if n_permutations < 1:
        raise ValueError(f"n_permutations must be >= 1, got {n_permutations}")
    X_bg, X_ex, names = _check_shapley_inputs(model, X_background, X_explain, feature_names)
    p = X_bg.shape[1]
    nb = len(X_bg)
    n_ex = len(X_ex)

    sums = np.zeros((n_ex, p))
    sq_sums = np.zeros((n_ex, p))
    # chunk explained rows so one batch stays within ~50 MB
    rows_per_batch = (p + 1) * nb
    chunk = max(1, int(50e6 / (rows_per_batch * p * 8)))
    for t in range(n_permutations):
        order = substream(seed, "perm", t).permutation(p)
        member = np.zeros((p + 1, p), dtype=bool)  # member[k] = first k features of order
        member[1:] = np.cumsum(np.eye(p, dtype=bool)[order], axis=0)
        for start in range(0, n_ex, chunk):
            ex = X_ex[start:start + chunk]
            batch = np.where(member[None, :, None, :], ex[:, None, None, :], X_bg[None, None, :, :])
            values = (model.predict(batch.reshape(len(ex) * rows_per_batch, p))
                      .reshape(len(ex), p + 1, nb).mean(axis=2))
            marginals = np.diff(values, axis=1)  # gain of order[k] at step k
            sums[start:start + chunk][:, order] += marginals
            sq_sums[start:start + chunk][:, order] += marginals * marginals
    attributions = sums / n_permutations
    if n_permutations > 1:
        variance = (sq_sums - n_permutations * attributions ** 2) / (n_permutations - 1)
        stderr = np.sqrt(np.maximum(variance, 0.0) / n_permutations)
    else:
        stderr = np.full((n_ex, p), np.inf)
    base_value = float(np.mean(model.predict(X_bg)))
    report = _global_report(names, attributions, {"estimator": "permutation",
                                                  "n_permutations": n_permutations,
                                                  "seed": seed,
                                                  "n_background": nb,
                                                  "n_explained": n_ex})
    return ShapleyResult(tuple(names), attributions, base_value, report, stderr=stderr)


def _coalition_weights(p: int) -> np.ndarray:
    """weights[s] = s! (p - s - 1)! / p! for coalition size s."""
    fact = [math.factorial(i) for i in range(p + 1)]
    return np.array([fact[s] * fact[p - s - 1] / fact[p] for s in range(p)])


def _check_shapley_inputs(model, X_background, X_explain, feature_names):
    X_bg = np.atleast_2d(np.asarray(X_background, dtype=np.float64))
    X_ex = np.atleast_2d(np.asarray(X_explain, dtype=np.float64))
    if len(X_bg) == 0:
        raise ValueError("background set is empty")
    if X_bg.shape[1] != X_ex.shape[1]:
        raise ValueError(f"background has {X_bg.shape[1]} columns, explained rows {X_ex.shape[1]}")
    p = X_bg.shape[1]
    if feature_names is not None:
        names = list(feature_names)
        if len(names) != p:
            raise ValueError("feature_names length does not match columns")
    else:
        names = list(getattr(model, "feature_names", None) or (f"f{j}" for j in range(p)))
    return X_bg, X_ex, names


def _global_report(names: Sequence[str], attributions: np.ndarray, metadata: dict) -> ImportanceReport:
    scores = {n: float(np.mean(np.abs(attributions[:, j]))) for j, n in enumerate(names)}
    return ImportanceReport("shapley", scores, metadata)


def _names(model: TreeEnsemble, p: int) -> tuple[str, ...]:
    if model.feature_names is not None:
        return model.feature_names
    return tuple(f"f{j}" for j in range(p))
