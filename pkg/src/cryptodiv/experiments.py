"""Scenario orchestration: per-cell pipeline runs and the result analyses.

A scenario is one (period start, prediction window) cell. run_scenario
composes the full pipeline for one cell; the helpers below compute the
derived analyses: per-category contribution factors, short/long horizon
merges, and the MSE improvement of the diverse feature vector over
single-category baselines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import Category, Dataset, MetricSeries, Scenario, chronological_split, make_target, slice_period
from .fra import FinalVector, FraConfig, ReducedFeatureSet, final_vector, fra_reduce
from .importance import mdi, shapley_sampled
from .indicators import default_battery, augment_corpus
from .models import EnsembleParams, TreeEnsemble, fit_forest, mse
from .seeding import substream

SHORT_TERM_WINDOWS = (1, 7)
LONG_TERM_WINDOWS = (90, 180)


class StageError(RuntimeError):
    """A pipeline stage failed; names the scenario and stage."""

    def __init__(self, scenario_label: str, stage: str, cause: Exception):
        super().__init__(f"scenario {scenario_label}, stage {stage}: {cause}")
        self.scenario_label = scenario_label
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ShapleySettings:
    n_permutations: int = 50
    background_rows: int = 50
    explain_rows: int = 25


@dataclass(frozen=True)
class PipelineConfig:
    """Everything run_scenario needs besides the corpus and the cell itself."""

    target_metric: str = "crypto100"
    indicator_sources: tuple[str, ...] = ("close-price", "market-cap", "volume")
    indicator_windows: tuple[int, ...] = (5, 10, 14, 20, 30, 100, 200)
    fra: FraConfig = field(default_factory=FraConfig)
    holdout_fraction: float = 0.2
    shapley: ShapleySettings = field(default_factory=ShapleySettings)
    seed: int = 0


@dataclass
class ImprovementResult:
    mse_diverse: float
    mse_by_category: dict[Category, float]
    improvement_by_category: dict[Category, float]  # percent decrease
    mean_improvement: float


@dataclass
class ScenarioResult:
    scenario: Scenario
    final_features: list[str]
    feature_categories: dict[str, Category]
    candidate_counts: dict[Category, int]
    contribution_factors: dict[Category, float]
    rf_importance: dict[str, float]
    model_summary: dict
    improvement: ImprovementResult
    fra_iterations: int
    fra_forced_stop: bool
    shap_overlap: int

    @property
    def label(self) -> str:
        return self.scenario.label

    @property
    def feature_count(self) -> int:
        return len(self.final_features)


def contribution_factors(final_features: Sequence[str],
                         categories: Mapping[str, Category],
                         candidate_counts: Mapping[Category, int]) -> dict[Category, float]:
    """Fraction of each category's candidates that made the final vector.

    Categories with zero candidates are omitted; a category with candidates
    but no survivors contributes 0.0.
    """
    survivors: dict[Category, int] = {}
    for f in final_features:
        if f not in categories:
            raise ValueError(f"final feature {f!r} has no category")
        cat = categories[f]
        survivors[cat] = survivors.get(cat, 0) + 1
    factors: dict[Category, float] = {}
    for cat in sorted(candidate_counts, key=lambda c: c.value):
        count = candidate_counts[cat]
        if count == 0:
            continue
        n_surviving = survivors.get(cat, 0)
        if n_surviving > count:
            raise ValueError(
                f"{cat.value}: {n_surviving} survivors exceed {count} candidates")
        factors[cat] = n_surviving / count
    return factors


@dataclass
class HorizonGroup:
    label: str
    windows: tuple[int, ...]
    importance: dict[str, float]


def group_horizons(importance_by_window: Mapping[int, Mapping[str, float]]
                   ) -> tuple[HorizonGroup, HorizonGroup]:
    """Merge per-window importance maps into short/long-term groups.

    Features present in both member windows get the arithmetic mean of
    their importance; features in one window keep their value.
    """
    short = _merge_group("short_term", SHORT_TERM_WINDOWS, importance_by_window)
    long = _merge_group("long_term", LONG_TERM_WINDOWS, importance_by_window)
    return short, long


def _merge_group(label: str, windows: tuple[int, ...],
                 importance_by_window: Mapping[int, Mapping[str, float]]) -> HorizonGroup:
    missing = [w for w in windows if w not in importance_by_window]
    if missing:
        raise ValueError(f"{label}: missing member scenario(s) for window(s) {missing}")
    maps = [importance_by_window[w] for w in windows]
    merged: dict[str, float] = {}
    for f in sorted(set().union(*maps)):
        values = [m[f] for m in maps if f in m]
        merged[f] = float(np.mean(values))
    return HorizonGroup(label=label, windows=windows, importance=merged)


def top_k(group: HorizonGroup, k: int = 5) -> list[tuple[str, float]]:
    ranked = sorted(group.importance.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def unique_top_k(group_a: HorizonGroup, group_b: HorizonGroup, k: int = 20
                 ) -> list[tuple[str, float]]:
    """Highest-importance features present in group A but absent from B."""
    only_a = {f: v for f, v in group_a.importance.items() if f not in group_b.importance}
    ranked = sorted(only_a.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


ModelFactory = Callable[[np.ndarray, np.ndarray, Sequence[str]], TreeEnsemble]


def improvement(model_factory: ModelFactory, dataset: Dataset,
                final_features: Sequence[str],
                category_partitions: Mapping[Category, Sequence[str]],
                holdout_fraction: float) -> ImprovementResult:
    """MSE percentage decrease of the diverse vector over each category arm.

    Every arm trains with the same factory (hence identical hyperparameters
    and seed) on the same chronological split; only the feature subset
    differs. improvement = (MSE_category - MSE_diverse) / MSE_diverse * 100.
    """
    train, test = chronological_split(dataset, holdout_fraction)

    def arm_mse(features: Sequence[str]) -> float:
        feats = sorted(features)
        model = model_factory(train.matrix(feats), train.target, feats)
        return mse(test.target, model.predict(test.matrix(feats)))

    mse_diverse = arm_mse(final_features)
    if mse_diverse == 0.0:
        raise ValueError("diverse-arm MSE is exactly 0; target leaks into the features")
    mse_by_category: dict[Category, float] = {}
    improvement_by_category: dict[Category, float] = {}
    for cat in sorted(category_partitions, key=lambda c: c.value):
        features = category_partitions[cat]
        if not features:
            raise ValueError(f"category {cat.value} has an empty feature partition")
        m = arm_mse(features)
        mse_by_category[cat] = m
        improvement_by_category[cat] = (m - mse_diverse) / mse_diverse * 100.0
    mean_improvement = float(np.mean(list(improvement_by_category.values())))
    return ImprovementResult(mse_diverse, mse_by_category, improvement_by_category,
                             mean_improvement)


# ---------------------------------------------------------------------------
# the per-cell pipeline
# ---------------------------------------------------------------------------

def _derived_seed(seed: int, *keys) -> int:
    return int(substream(seed, *keys).integers(0, 2 ** 63 - 1))


def scenario_seed(config_seed: int, scenario: Scenario) -> int:
    return _derived_seed(config_seed, "scenario", scenario.period_start.isoformat(),
                         scenario.window)


def prepare_dataset(corpus: Mapping[str, MetricSeries], scenario: Scenario,
                    config: PipelineConfig) -> Dataset:
    """Indicator augmentation, period slice, and target attachment for one cell.

    Indicators are computed over each source's full history before slicing
    so their warm-up uses data from before the period start and never
    introduces missing rows inside the slice.
    """
    if config.indicator_sources:
        battery = default_battery(config.indicator_sources, config.indicator_windows)
        corpus = augment_corpus(corpus, battery)
    if config.target_metric not in corpus:
        raise ValueError(f"target metric {config.target_metric!r} not in corpus")
    index_price = corpus[config.target_metric]
    dataset = slice_period(corpus, scenario)
    features = {n: v for n, v in dataset.features.items() if n != config.target_metric}
    if not features:
        raise ValueError("no candidate features besides the target metric")
    dataset = Dataset(
        dates=dataset.dates, features=features,
        categories={n: c for n, c in dataset.categories.items() if n in features})
    return make_target(dataset, index_price, scenario.window)


def run_scenario(corpus: Mapping[str, MetricSeries], scenario: Scenario,
                 config: PipelineConfig) -> ScenarioResult:
    """Execute the full pipeline for one cell and collect every analysis."""
    label = scenario.label
    seed = scenario_seed(config.seed, scenario)

    def stage(name: str, fn: Callable, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(label, name, exc) from exc

    dataset = stage("prepare", prepare_dataset, corpus, scenario, config)
    train, _test = stage("split", chronological_split, dataset, config.holdout_fraction)

    fra_config = replace(config.fra, seed=_derived_seed(seed, "fra"))
    fra_result: ReducedFeatureSet = stage("fra", fra_reduce, train, fra_config)

    shap_report = stage("shapley", _shapley_ranking, train, fra_result.rf_params,
                        config.shapley, seed)
    fv: FinalVector = stage("final_vector", final_vector, fra_result, shap_report,
                            config.fra.top_k_union)

    rf_final = stage("importance", _fit_final_rf, train, fv.features,
                     fra_result.rf_params, seed)
    final_mdi = stage("importance", mdi, rf_final)
    rf_importance = {f: final_mdi.scores[f] for f in sorted(fv.features)}

    candidate_counts: dict[Category, int] = {}
    for f, cat in train.categories.items():
        candidate_counts[cat] = candidate_counts.get(cat, 0) + 1
    factors = stage("contribution", contribution_factors, fv.features,
                    train.categories, candidate_counts)

    partitions = {cat: [f for f, c in train.categories.items() if c is cat]
                  for cat in candidate_counts}
    improvement_seed = _derived_seed(seed, "improvement")
    rf_params = fra_result.rf_params

    def factory(X, y, feats):
        return fit_forest(X, y, rf_params, improvement_seed, feature_names=feats)

    improvement_result = stage("improvement", improvement, factory, dataset,
                               fv.features, partitions, config.holdout_fraction)

    return ScenarioResult(
        scenario=scenario,
        final_features=fv.features,
        feature_categories={f: train.categories[f] for f in fv.features},
        candidate_counts=candidate_counts,
        contribution_factors=factors,
        rf_importance=rf_importance,
        model_summary={
            "rf": _params_summary(fra_result.rf_params),
            "gbt": _params_summary(fra_result.gbt_params),
            "final_rf_trees": len(rf_final.trees),
            "final_rf_max_depth": max(t.depth() for t in rf_final.trees),
        },
        improvement=improvement_result,
        fra_iterations=len(fra_result.iterations),
        fra_forced_stop=fra_result.forced_stop,
        shap_overlap=fv.shap_overlap,
    )


def _shapley_ranking(train: Dataset, rf_params: EnsembleParams,
                     settings: ShapleySettings, seed: int):
    features = list(train.feature_names)
    X = train.matrix(features)
    model = fit_forest(X, train.target, rf_params, _derived_seed(seed, "shap", "model"),
                       feature_names=features)
    bg_rows = _subsample_rows(len(X), settings.background_rows,
                              substream(seed, "shap", "background"))
    ex_rows = _subsample_rows(len(X), settings.explain_rows,
                              substream(seed, "shap", "explain"))
    result = shapley_sampled(model, X[bg_rows], X[ex_rows],
                             n_permutations=settings.n_permutations,
                             seed=_derived_seed(seed, "shap", "perms"),
                             feature_names=features)
    return result.report


def _subsample_rows(n: int, limit: int, rng: np.random.Generator) -> np.ndarray:
    if n <= limit:
        return np.arange(n)
    return np.sort(rng.choice(n, size=limit, replace=False))


def _fit_final_rf(train: Dataset, features: Sequence[str], params: EnsembleParams,
                  seed: int) -> TreeEnsemble:
    feats = sorted(features)
    return fit_forest(train.matrix(feats), train.target, params,
                      _derived_seed(seed, "final_rf"), feature_names=feats)


def _params_summary(params: EnsembleParams) -> dict:
    return {
        "kind": params.kind.value,
        "n_estimators": params.n_estimators,
        "max_depth": params.max_depth,
        "min_samples_split": params.min_samples_split,
        "min_samples_leaf": params.min_samples_leaf,
        "features_per_split": params.features_per_split,
        "learning_rate": params.learning_rate,
        "bootstrap": params.bootstrap,
    }


# ---------------------------------------------------------------------------
# serialization for stored results
# ---------------------------------------------------------------------------

def result_to_json(result: ScenarioResult) -> str:
    doc = {
        "scenario": {
            "period_start": result.scenario.period_start.isoformat(),
            "window": result.scenario.window,
            "label": result.label,
        },
        "feature_count": result.feature_count,
        "final_features": result.final_features,
        "feature_categories": {f: c.value for f, c in result.feature_categories.items()},
        "candidate_counts": {c.value: n for c, n in result.candidate_counts.items()},
        "contribution_factors": {c.value: v for c, v in result.contribution_factors.items()},
        "rf_importance": result.rf_importance,
        "model_summary": result.model_summary,
        "improvement": {
            "mse_diverse": result.improvement.mse_diverse,
            "mse_by_category": {c.value: v for c, v in result.improvement.mse_by_category.items()},
            "improvement_by_category": {c.value: v for c, v in
                                        result.improvement.improvement_by_category.items()},
            "mean_improvement": result.improvement.mean_improvement,
        },
        "fra": {
            "iterations": result.fra_iterations,
            "forced_stop": result.fra_forced_stop,
        },
        "shap_overlap": result.shap_overlap,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def result_from_json(text: str) -> ScenarioResult:
    doc = json.loads(text)
    scenario = Scenario(date.fromisoformat(doc["scenario"]["period_start"]),
                        int(doc["scenario"]["window"]))
    improvement_result = ImprovementResult(
        mse_diverse=doc["improvement"]["mse_diverse"],
        mse_by_category={Category(c): v for c, v in doc["improvement"]["mse_by_category"].items()},
        improvement_by_category={Category(c): v for c, v in
                                 doc["improvement"]["improvement_by_category"].items()},
        mean_improvement=doc["improvement"]["mean_improvement"],
    )
    return ScenarioResult(
        scenario=scenario,
        final_features=list(doc["final_features"]),
        feature_categories={f: Category(c) for f, c in doc["feature_categories"].items()},
        candidate_counts={Category(c): n for c, n in doc["candidate_counts"].items()},
        contribution_factors={Category(c): v for c, v in doc["contribution_factors"].items()},
        rf_importance=doc["rf_importance"],
        model_summary=doc["model_summary"],
        improvement=improvement_result,
        fra_iterations=doc["fra"]["iterations"],
        fra_forced_stop=doc["fra"]["forced_stop"],
        shap_overlap=doc["shap_overlap"],
    )
