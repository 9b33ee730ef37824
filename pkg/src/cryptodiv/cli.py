"""Command-line entry points.

Subcommands:
  index       build the market-cap index CSV, optionally calibrating the power
  run         execute every (period, window) scenario cell and write all artifacts
  fra         run the feature-reduction loop for one cell, writing the audit trail
  importance  compute one importance report for one cell
  report      re-render the aggregate tables from stored scenario results

All randomness flows from the single config seed; flags override config
file values.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path

from . import data, experiments, fra, importance, index, models, reports
from .data import Category, Scenario
from .experiments import PipelineConfig, ShapleySettings, StageError
from .fra import FraConfig
from .models import EnsembleParams, ModelKind


class ConfigError(ValueError):
    """A run-config document is malformed; the message names the bad key."""


@dataclass
class RunConfig:
    manifest: Path
    output_dir: Path
    seed: int = 0
    periods: tuple[date, ...] = (date(2017, 1, 1), date(2019, 1, 1))
    windows: tuple[int, ...] = (1, 7, 30, 90, 180)
    flat_run_max: int = 60
    missing_ratio_max: float = 0.20
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    index_input: Path | None = None       # optional mcaps CSV to build the target index
    index_params: index.IndexParams = field(default_factory=index.IndexParams)
    jobs: int = 1


_PARAM_KEYS = {"kind", "n_estimators", "max_depth", "min_samples_split",
               "min_samples_leaf", "features_per_split", "learning_rate", "bootstrap"}
_FRA_KEYS = {"target_count", "corr_start", "corr_step", "top_k_union", "tune_first",
             "cv_folds", "pfi_repeats", "max_iterations", "rf", "gbt"}
_SHAP_KEYS = {"n_permutations", "background_rows", "explain_rows"}
_INDEX_KEYS = {"mcaps", "top_n", "power"}
_TOP_KEYS = {"manifest", "output_dir", "seed", "periods", "windows", "holdout_fraction",
             "target_metric", "indicator_sources", "indicator_windows", "flat_run_max",
             "missing_ratio_max", "fra", "shapley", "index"}


def _check_keys(doc: dict, allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} at {where}")


def _parse_params(doc: dict, where: str, kind: ModelKind) -> EnsembleParams:
    _check_keys(doc, _PARAM_KEYS, where)
    fields = dict(doc)
    fields.pop("kind", None)
    try:
        return EnsembleParams(kind=kind, **fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model parameters at {where}: {exc}") from exc


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object: {path}")
    _check_keys(doc, _TOP_KEYS, "config root")
    for key in ("manifest", "output_dir"):
        if key not in doc:
            raise ConfigError(f"missing required key {key!r} at config root")

    base = path.parent
    fra_doc = doc.get("fra", {})
    _check_keys(fra_doc, _FRA_KEYS, "fra")
    rf_params = _parse_params(fra_doc["rf"], "fra.rf", ModelKind.RANDOM_FOREST) if "rf" in fra_doc else None
    gbt_params = _parse_params(fra_doc["gbt"], "fra.gbt", ModelKind.GRADIENT_BOOST) if "gbt" in fra_doc else None
    try:
        fra_config = FraConfig(
            target_count=fra_doc.get("target_count", 100),
            corr_start=fra_doc.get("corr_start", 0.5),
            corr_step=fra_doc.get("corr_step", 0.025),
            top_k_union=fra_doc.get("top_k_union", 75),
            tune_first=fra_doc.get("tune_first", False),
            cv_folds=fra_doc.get("cv_folds", 5),
            pfi_repeats=fra_doc.get("pfi_repeats", 3),
            max_iterations=fra_doc.get("max_iterations", 200),
            rf_params=rf_params,
            gbt_params=gbt_params,
        )
    except ValueError as exc:
        raise ConfigError(f"bad value at fra: {exc}") from exc

    shap_doc = doc.get("shapley", {})
    _check_keys(shap_doc, _SHAP_KEYS, "shapley")
    shapley = ShapleySettings(
        n_permutations=shap_doc.get("n_permutations", 50),
        background_rows=shap_doc.get("background_rows", 50),
        explain_rows=shap_doc.get("explain_rows", 25),
    )

    try:
        periods = tuple(date.fromisoformat(p) for p in doc.get("periods", ["2017-01-01", "2019-01-01"]))
        windows = tuple(int(w) for w in doc.get("windows", [1, 7, 30, 90, 180]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad periods/windows: {exc}") from exc
    if any(w < 1 for w in windows):
        raise ConfigError(f"windows must be >= 1, got {windows}")

    pipeline = PipelineConfig(
        target_metric=doc.get("target_metric", "crypto100"),
        indicator_sources=tuple(doc.get("indicator_sources", ["close-price", "market-cap", "volume"])),
        indicator_windows=tuple(doc.get("indicator_windows", [5, 10, 14, 20, 30, 100, 200])),
        fra=fra_config,
        holdout_fraction=float(doc.get("holdout_fraction", 0.2)),
        shapley=shapley,
        seed=int(doc.get("seed", 0)),
    )

    index_input = None
    index_params = index.IndexParams()
    if "index" in doc:
        _check_keys(doc["index"], _INDEX_KEYS, "index")
        if "mcaps" not in doc["index"]:
            raise ConfigError("index section needs an 'mcaps' path")
        index_input = base / doc["index"]["mcaps"]
        try:
            index_params = index.IndexParams(top_n=doc["index"].get("top_n", 100),
                                             power=doc["index"].get("power", 7))
        except ValueError as exc:
            raise ConfigError(f"bad value at index: {exc}") from exc

    return RunConfig(
        manifest=base / doc["manifest"],
        output_dir=base / doc["output_dir"],
        seed=pipeline.seed,
        periods=periods,
        windows=windows,
        flat_run_max=int(doc.get("flat_run_max", 60)),
        missing_ratio_max=float(doc.get("missing_ratio_max", 0.20)),
        pipeline=pipeline,
        index_input=index_input,
        index_params=index_params,
    )


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    pipeline = cfg.pipeline
    fra_cfg = pipeline.fra
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = Path(args.out)
    if getattr(args, "periods", None):
        cfg.periods = tuple(date.fromisoformat(p) for p in args.periods.split(","))
    if getattr(args, "windows", None):
        cfg.windows = tuple(int(w) for w in args.windows.split(","))
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    fra_changes = {}
    if getattr(args, "target_features", None) is not None:
        fra_changes["target_count"] = args.target_features
    if getattr(args, "corr_start", None) is not None:
        fra_changes["corr_start"] = args.corr_start
    if getattr(args, "corr_step", None) is not None:
        fra_changes["corr_step"] = args.corr_step
    if getattr(args, "top_k", None) is not None:
        fra_changes["top_k_union"] = args.top_k
    if fra_changes:
        fra_cfg = replace(fra_cfg, **fra_changes)
    holdout = getattr(args, "holdout", None)
    pipeline = replace(pipeline, fra=fra_cfg,
                       holdout_fraction=holdout if holdout is not None else pipeline.holdout_fraction,
                       seed=cfg.seed)
    if getattr(args, "power", None) is not None:
        cfg.index_params = replace(cfg.index_params, power=args.power)
    cfg.pipeline = pipeline
    return cfg


# ---------------------------------------------------------------------------
# corpus preparation shared by run / fra / importance
# ---------------------------------------------------------------------------

def _prepare_corpus(cfg: RunConfig):
    """Load, optionally inject the computed index series, and clean."""
    corpus = data.load_corpus(cfg.manifest)
    index_rows = None
    if cfg.index_input is not None:
        snapshots = index.load_mcap_csv(cfg.index_input)
        index_rows = index.index_series(snapshots, cfg.index_params)
        name = cfg.pipeline.target_metric
        if name in corpus:
            raise ConfigError(f"index target {name!r} already exists in the corpus")
        corpus[name] = data.MetricSeries(
            name, Category.MARKET,
            tuple(d for d, _, _ in index_rows),
            [v for _, _, v in index_rows],
        )
        corpus = {k: corpus[k] for k in sorted(corpus)}
    cleaned, drop_log, imputed = data.clean_corpus(
        corpus, flat_run_max=cfg.flat_run_max, missing_ratio_max=cfg.missing_ratio_max)
    return cleaned, drop_log, imputed, index_rows


def _scenario_dataset(cfg: RunConfig, scenario: Scenario):
    corpus, _, _, _ = _prepare_corpus(cfg)
    dataset = experiments.prepare_dataset(corpus, scenario, cfg.pipeline)
    train, test = data.chronological_split(dataset, cfg.pipeline.holdout_fraction)
    return train, test


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_index(args: argparse.Namespace) -> int:
    params = index.IndexParams(top_n=args.top_n, power=args.power)
    snapshots = index.load_mcap_csv(args.mcaps)
    if args.calibrate:
        if not args.reference:
            print("error: --calibrate requires --reference", file=sys.stderr)
            return 1
        reference = _load_single_series_csv(Path(args.reference))
        sums = {}
        for snap in snapshots:
            top = index.select_top_n(snap, params.top_n)
            sums[snap.date] = float(sum(snap.caps[s] for s in top))
        candidates = tuple(int(c) for c in args.candidates.split(","))
        result = index.calibrate_power(sums, reference, candidates)
        params = replace(params, power=result.power)
        if args.fit_out:
            reports.atomic_write_text(args.fit_out, index.render_calibration_csv(result))
        print(f"calibrated power: {result.power}")
    rows = index.index_series(snapshots, params)
    reports.atomic_write_text(args.out, index.render_index_csv(rows, params.power))
    print(f"wrote {len(rows)} index rows to {args.out}")
    return 0


def _load_single_series_csv(path: Path) -> dict[date, float]:
    """Read a `date,<value>` CSV into a date -> value map."""
    if not path.is_file():
        raise FileNotFoundError(f"reference file not found: {path}")
    out: dict[date, float] = {}
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("date,"):
            raise ValueError(f"{path}: expected a 'date,<metric>' header")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            try:
                out[date.fromisoformat(cells[0])] = float(cells[1])
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: bad row {line!r}") from None
    return out


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    corpus, drop_log, imputed, index_rows = _prepare_corpus(cfg)
    scenarios = [Scenario(p, w) for p in cfg.periods for w in cfg.windows]

    def one(scenario: Scenario) -> experiments.ScenarioResult:
        return experiments.run_scenario(corpus, scenario, cfg.pipeline)

    try:
        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(one, scenarios))
        else:
            results = [one(s) for s in scenarios]
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out = cfg.output_dir
    for result in results:
        reports.atomic_write_text(out / "scenarios" / f"{result.label}.json",
                                  experiments.result_to_json(result))
    reports.write_tables(results, out / "tables")
    reports.atomic_write_text(out / "drop_log.csv", reports.render_drop_log_csv(drop_log))
    if imputed:
        lines = ["metric,forward_filled_days"]
        lines += [f"{m},{n}" for m, n in sorted(imputed.items())]
        reports.atomic_write_text(out / "imputation_log.csv", "\n".join(lines) + "\n")
    if index_rows is not None:
        reports.atomic_write_text(out / "index.csv",
                                  index.render_index_csv(index_rows, cfg.index_params.power))
    print(f"completed {len(results)} scenario(s); artifacts in {out}")
    return 0


def cmd_fra(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    scenario = Scenario(date.fromisoformat(args.period), args.window)
    train, _ = _scenario_dataset(cfg, scenario)
    seed = experiments.scenario_seed(cfg.pipeline.seed, scenario)
    fra_config = replace(cfg.pipeline.fra, seed=experiments._derived_seed(seed, "fra"))
    result = fra.fra_reduce(train, fra_config)
    out_dir = Path(args.out) if args.out else cfg.output_dir / "fra"
    reports.atomic_write_text(out_dir / f"{scenario.label}_audit.json", fra.audit_json(result))
    lines = ["feature,rank"]
    lines += [f"{f},{i}" for i, f in enumerate(result.survivors, start=1)]
    reports.atomic_write_text(out_dir / f"{scenario.label}_survivors.csv", "\n".join(lines) + "\n")
    flag = " (forced stop)" if result.forced_stop else ""
    print(f"{scenario.label}: {len(result.original)} -> {len(result.survivors)} features "
          f"in {len(result.iterations)} iteration(s){flag}; audit in {out_dir}")
    return 0


def cmd_importance(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    scenario = Scenario(date.fromisoformat(args.period), args.window)
    train, _ = _scenario_dataset(cfg, scenario)
    seed = experiments.scenario_seed(cfg.pipeline.seed, scenario)
    features = list(train.feature_names)
    rf_params = cfg.pipeline.fra.rf_params or fra.DEFAULT_RF_PARAMS

    if args.method == "pearson":
        report = importance.pearson_report(train.features, train.target)
    elif args.method == "shapley":
        report = experiments._shapley_ranking(train, rf_params, cfg.pipeline.shapley, seed)
    else:
        X = train.matrix(features)
        model = models.fit_forest(X, train.target, rf_params,
                                  experiments._derived_seed(seed, "importance", "rf"),
                                  feature_names=features)
        if args.method == "mdi":
            report = importance.mdi(model)
        else:
            report = importance.pfi(model, X, train.target,
                                    repeats=cfg.pipeline.fra.pfi_repeats,
                                    seed=experiments._derived_seed(seed, "importance", "pfi"),
                                    feature_names=features)
    out = Path(args.out) if args.out else cfg.output_dir / "importance" / f"{scenario.label}_{args.method}.csv"
    reports.atomic_write_text(out, report.to_csv())
    print(f"wrote {args.method} report for {scenario.label} to {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    results_dir = Path(args.results)
    scenario_dir = results_dir / "scenarios"
    if not scenario_dir.is_dir():
        print(f"error: no scenarios directory under {results_dir}", file=sys.stderr)
        return 1
    results = []
    for path in sorted(scenario_dir.glob("*.json")):
        results.append(experiments.result_from_json(path.read_text()))
    if not results:
        print(f"error: no stored scenario results in {scenario_dir}", file=sys.stderr)
        return 1
    out_dir = Path(args.out) if args.out else results_dir / "tables"
    written = reports.write_tables(results, out_dir)
    print(f"re-rendered {len(written)} table(s) from {len(results)} scenario(s) into {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cryptodiv",
        description="Data-source diversity pipeline for cryptocurrency forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="compute the market-cap index CSV")
    p_index.add_argument("--mcaps", required=True, help="long-format CSV date,asset,market_cap_usd")
    p_index.add_argument("--power", type=int, default=7)
    p_index.add_argument("--top-n", type=int, default=100)
    p_index.add_argument("--out", required=True)
    p_index.add_argument("--calibrate", action="store_true",
                         help="choose the power against a reference price series")
    p_index.add_argument("--reference", help="date,<price> CSV used by --calibrate")
    p_index.add_argument("--candidates", default="5,6,7,8,9")
    p_index.add_argument("--fit-out", help="write the calibration fit table here")
    p_index.set_defaults(func=cmd_index)

    def add_common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--jobs", type=int)
        p.add_argument("--periods")
        p.add_argument("--windows")
        p.add_argument("--target-features", type=int, dest="target_features")
        p.add_argument("--corr-start", type=float, dest="corr_start")
        p.add_argument("--corr-step", type=float, dest="corr_step")
        p.add_argument("--top-k", type=int, dest="top_k")
        p.add_argument("--power", type=int)
        p.add_argument("--holdout", type=float)

    p_run = sub.add_parser("run", help="run every scenario cell and write artifacts")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_fra = sub.add_parser("fra", help="run feature reduction for one cell")
    add_common(p_fra)
    p_fra.add_argument("--period", required=True, help="period start YYYY-MM-DD")
    p_fra.add_argument("--window", required=True, type=int)
    p_fra.set_defaults(func=cmd_fra)

    p_imp = sub.add_parser("importance", help="one importance report for one cell")
    add_common(p_imp)
    p_imp.add_argument("--period", required=True)
    p_imp.add_argument("--window", required=True, type=int)
    p_imp.add_argument("--method", required=True,
                       choices=["pearson", "mdi", "pfi", "shapley"])
    p_imp.set_defaults(func=cmd_importance)

    p_rep = sub.add_parser("report", help="re-render tables from stored results")
    p_rep.add_argument("--results", required=True, help="output directory of a previous run")
    p_rep.add_argument("--out")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, data.ManifestError, index.IndexDomainError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
