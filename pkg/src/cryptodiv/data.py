"""Corpus ingestion, cleaning, and per-scenario dataset construction.

A corpus is a dict of named daily metric series, each tagged with a source
category. Cleaning is a fixed pipeline: dedupe -> forward-fill traditional
market indices onto the daily grid -> drop degenerate columns -> linear
interpolation of interior gaps. Scenario datasets are then sliced from the
cleaned corpus with a shifted future-index target.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class ManifestError(ValueError):
    """Raised when a corpus manifest or its CSV files are invalid."""


class Category(Enum):
    """Data-source category of a metric series."""

    MACRO = "macro"
    TECHNICAL = "technical"
    SENTIMENT_INTEREST = "sentiment"
    TRADITIONAL_INDEX = "trad_index"
    ONCHAIN_BTC = "onchain_btc"
    ONCHAIN_USDC = "onchain_usdc"
    MARKET = "market"


_CATEGORY_TAGS = {c.value: c for c in Category}


@dataclass(frozen=True)
class MetricSeries:
    """One named daily time series; NaN marks a missing value."""

    name: str
    category: Category
    dates: tuple[date, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.dates) != len(self.values):
            raise ValueError(f"{self.name}: {len(self.dates)} dates vs {len(self.values)} values")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    @classmethod
    def from_points(cls, name: str, category: Category,
                    points: Iterable[tuple[date, float | None]]) -> "MetricSeries":
        pts = list(points)
        dates = tuple(d for d, _ in pts)
        values = np.array([np.nan if v is None else float(v) for _, v in pts])
        return cls(name, category, dates, values)

    @property
    def points(self) -> list[tuple[date, float | None]]:
        return [(d, None if np.isnan(v) else float(v))
                for d, v in zip(self.dates, self.values)]

    def first_valid_date(self) -> date | None:
        idx = np.flatnonzero(~np.isnan(self.values))
        return self.dates[idx[0]] if idx.size else None

    def last_valid_date(self) -> date | None:
        idx = np.flatnonzero(~np.isnan(self.values))
        return self.dates[idx[-1]] if idx.size else None

    def value_map(self) -> dict[date, float]:
        """Date -> value for the observed (non-missing) points."""
        return {d: float(v) for d, v in zip(self.dates, self.values) if not np.isnan(v)}


@dataclass(frozen=True)
class Scenario:
    """One experiment cell: a period start and a prediction window in days."""

    period_start: date
    window: int

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")

    @property
    def label(self) -> str:
        return f"{self.period_start.year}_{self.window}"


@dataclass
class Dataset:
    """Date-aligned feature matrix with a category per feature.

    Feature columns are kept in name-sorted order so every downstream
    computation is invariant to the order columns were supplied in.
    The target column is absent until make_target is applied.
    """

    dates: tuple[date, ...]
    features: dict[str, np.ndarray]
    categories: dict[str, Category]
    target: np.ndarray | None = None
    window: int | None = None

    def __post_init__(self):
        ordered = {}
        for name in sorted(self.features):
            col = np.asarray(self.features[name], dtype=np.float64)
            if len(col) != len(self.dates):
                raise ValueError(f"column {name!r} has length {len(col)}, expected {len(self.dates)}")
            if name not in self.categories:
                raise ValueError(f"feature {name!r} has no category")
            ordered[name] = col
        self.features = ordered
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=np.float64)
            if len(self.target) != len(self.dates):
                raise ValueError("target length does not match dates")

    @property
    def n_rows(self) -> int:
        return len(self.dates)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(self.features)

    def matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        """Row-major feature matrix; columns follow `names` or canonical order."""
        cols = list(self.features) if names is None else list(names)
        if not cols:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self.features[c] for c in cols])

    def select(self, names: Iterable[str]) -> "Dataset":
        keep = set(names)
        missing = keep - set(self.features)
        if missing:
            raise KeyError(f"unknown features: {sorted(missing)}")
        return Dataset(
            dates=self.dates,
            features={n: v for n, v in self.features.items() if n in keep},
            categories={n: c for n, c in self.categories.items() if n in keep},
            target=self.target,
            window=self.window,
        )

    def rows(self, start: int, stop: int) -> "Dataset":
        return Dataset(
            dates=self.dates[start:stop],
            features={n: v[start:stop] for n, v in self.features.items()},
            categories=dict(self.categories),
            target=None if self.target is None else self.target[start:stop],
            window=self.window,
        )


@dataclass(frozen=True)
class DropRecord:
    """One dropped column with the single reason that removed it."""

    metric: str
    reason: str  # "flat_run" or "missing_ratio"
    detail: str


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def load_corpus(manifest_path: str | Path) -> dict[str, MetricSeries]:
    """Load all metric series listed in a JSON manifest.

    The manifest maps CSV files (relative to the manifest) to a per-column
    category tag: ``{"files": {"prices.csv": {"close-price": "market"}}}``.
    Every non-date column of every file must be listed with a known tag, and
    metric names must be unique across files. Returned dict is sorted by
    metric name, so the result does not depend on file order.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {manifest_path}: {exc}") from exc
    files = manifest.get("files")
    if not isinstance(files, dict) or not files:
        raise ManifestError(f"manifest must contain a non-empty 'files' mapping: {manifest_path}")

    corpus: dict[str, MetricSeries] = {}
    for rel_path in sorted(files):
        column_tags = files[rel_path]
        if not isinstance(column_tags, dict):
            raise ManifestError(f"{manifest_path}: entry for {rel_path!r} must map columns to categories")
        csv_path = manifest_path.parent / rel_path
        for series in _load_metric_csv(csv_path, column_tags):
            if series.name in corpus:
                raise ManifestError(f"duplicate metric name {series.name!r} (second occurrence in {rel_path})")
            corpus[series.name] = series
    return {name: corpus[name] for name in sorted(corpus)}


def _load_metric_csv(csv_path: Path, column_tags: Mapping[str, str]) -> list[MetricSeries]:
    if not csv_path.is_file():
        raise ManifestError(f"data file not found: {csv_path}")
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{csv_path}: empty file") from None
        if not header or header[0] != "date":
            raise ManifestError(f"{csv_path}: first column must be 'date', got {header[:1]}")
        metrics = header[1:]
        for m in metrics:
            if m not in column_tags:
                raise ManifestError(f"{csv_path}: metric {m!r} absent from manifest")
        for m in column_tags:
            if m not in metrics:
                raise ManifestError(f"{csv_path}: manifest lists {m!r} but file has no such column")
        categories = {}
        for m, tag in column_tags.items():
            if tag not in _CATEGORY_TAGS:
                raise ManifestError(f"{csv_path}: unknown category {tag!r} for metric {m!r}")
            categories[m] = _CATEGORY_TAGS[tag]

        rows: list[tuple[date, list[float]]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                d = date.fromisoformat(row[0].strip())
            except ValueError:
                raise ManifestError(f"{csv_path}:{lineno}: unparseable date {row[0]!r}") from None
            vals = []
            for i, m in enumerate(metrics, start=1):
                cell = row[i].strip() if i < len(row) else ""
                if cell == "":
                    vals.append(np.nan)
                else:
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise ManifestError(f"{csv_path}:{lineno}: bad value {cell!r} for {m!r}") from None
            rows.append((d, vals))

    rows.sort(key=lambda r: r[0])  # stable: file order preserved among equal dates
    dates = tuple(r[0] for r in rows)
    table = np.array([r[1] for r in rows]) if rows else np.empty((0, len(metrics)))
    return [MetricSeries(m, categories[m], dates, table[:, i]) for i, m in enumerate(metrics)]


# ---------------------------------------------------------------------------
# per-series cleaning
# ---------------------------------------------------------------------------

def dedupe(series: MetricSeries) -> MetricSeries:
    """Drop repeated dates, keeping the first occurrence of each."""
    seen: set[date] = set()
    keep = []
    for i, d in enumerate(series.dates):
        if d not in seen:
            seen.add(d)
            keep.append(i)
    if len(keep) == len(series.dates):
        return series
    idx = np.array(keep)
    return replace(series, dates=tuple(series.dates[i] for i in keep), values=series.values[idx])


def _to_daily_grid(series: MetricSeries) -> MetricSeries:
    """Expand onto the consecutive daily calendar spanning the series' dates."""
    if not series.dates:
        return series
    first, last = series.dates[0], series.dates[-1]
    n = (last - first).days + 1
    if n == len(series.dates):
        return series
    values = np.full(n, np.nan)
    for d, v in zip(series.dates, series.values):
        values[(d - first).days] = v
    dates = tuple(first + timedelta(days=i) for i in range(n))
    return replace(series, dates=dates, values=values)


def forward_fill(series: MetricSeries) -> tuple[MetricSeries, int]:
    """Fill interior gaps with the last observed value on the daily grid.

    Returns the filled series and the number of imputed days. Used for
    traditional market indices, which do not trade on weekends. Leading gaps
    are left missing.
    """
    daily = _to_daily_grid(series)
    values = daily.values.copy()
    filled = 0
    last = np.nan
    last_valid = _last_valid_index(values)
    for i in range(len(values)):
        if np.isnan(values[i]):
            if not np.isnan(last) and last_valid is not None and i < last_valid:
                values[i] = last
                filled += 1
        else:
            last = values[i]
    if filled == 0:
        return daily, 0
    return replace(daily, values=values), filled


def interpolate_fill(series: MetricSeries) -> MetricSeries:
    """Linearly interpolate interior missing values on the daily calendar.

    Leading and trailing gaps are never filled; they are handled later by
    slice_period / drop_degenerate.
    """
    daily = _to_daily_grid(series)
    values = daily.values
    missing = np.isnan(values)
    if not missing.any():
        return daily
    valid = np.flatnonzero(~missing)
    if valid.size == 0:
        return daily
    lo, hi = valid[0], valid[-1]
    interior = missing.copy()
    interior[:lo] = False
    interior[hi + 1:] = False
    if not interior.any():
        return daily
    out = values.copy()
    out[interior] = np.interp(np.flatnonzero(interior), valid, values[valid])
    return replace(daily, values=out)


def _last_valid_index(values: np.ndarray) -> int | None:
    idx = np.flatnonzero(~np.isnan(values))
    return int(idx[-1]) if idx.size else None


# ---------------------------------------------------------------------------
# corpus-level cleaning
# ---------------------------------------------------------------------------

def align_calendar(corpus: Mapping[str, MetricSeries]) -> tuple[tuple[date, ...], dict[str, np.ndarray]]:
    """Pad every series with NaN onto the corpus-wide daily calendar."""
    if not corpus:
        raise ValueError("empty corpus")
    firsts = [s.dates[0] for s in corpus.values() if s.dates]
    lasts = [s.dates[-1] for s in corpus.values() if s.dates]
    if not firsts:
        raise ValueError("corpus has no dated points")
    start, end = min(firsts), max(lasts)
    n = (end - start).days + 1
    grid = tuple(start + timedelta(days=i) for i in range(n))
    columns = {}
    for name in sorted(corpus):
        series = corpus[name]
        col = np.full(n, np.nan)
        for d, v in zip(series.dates, series.values):
            col[(d - start).days] = v
        columns[name] = col
    return grid, columns


def longest_flat_run(values: np.ndarray) -> int:
    """Length of the longest run of equal consecutive observed values."""
    best = run = 0
    prev = np.nan
    for v in values:
        if not np.isnan(v) and v == prev:
            run += 1
        else:
            run = 1 if not np.isnan(v) else 0
        best = max(best, run)
        prev = v
    return best


def drop_degenerate(
    columns: Mapping[str, np.ndarray],
    flat_run_max: int = 60,
    missing_ratio_max: float = 0.20,
) -> tuple[dict[str, np.ndarray], list[DropRecord]]:
    """Drop columns that are flat or gappy for very long stretches.

    A column goes if its longest constant run reaches ``flat_run_max`` days
    or the missing fraction within its observed span exceeds
    ``missing_ratio_max``. Leading/trailing gaps do not count toward the
    ratio: late-starting metrics are a slice_period concern, not a data
    quality defect. Each dropped column gets exactly one reason.
    """
    kept: dict[str, np.ndarray] = {}
    log: list[DropRecord] = []
    for name in sorted(columns):
        col = np.asarray(columns[name], dtype=np.float64)
        valid = np.flatnonzero(~np.isnan(col))
        if valid.size == 0:
            log.append(DropRecord(name, "missing_ratio", "no observed values"))
            continue
        span = col[valid[0]:valid[-1] + 1]
        run = longest_flat_run(span)
        if run >= flat_run_max:
            log.append(DropRecord(name, "flat_run", f"constant for {run} days"))
            continue
        ratio = float(np.isnan(span).mean())
        if ratio > missing_ratio_max:
            log.append(DropRecord(name, "missing_ratio", f"{ratio:.4f} missing within span"))
            continue
        kept[name] = col
    return kept, log


def clean_corpus(
    corpus: Mapping[str, MetricSeries],
    flat_run_max: int = 60,
    missing_ratio_max: float = 0.20,
) -> tuple[dict[str, MetricSeries], list[DropRecord], dict[str, int]]:
    """Run the full cleaning pipeline over a raw corpus.

    Returns the cleaned corpus (every series on the common daily calendar,
    interior gaps interpolated), the drop log, and a per-series count of
    forward-filled days for traditional index series.
    """
    imputed: dict[str, int] = {}
    prepared: dict[str, MetricSeries] = {}
    for name in sorted(corpus):
        series = dedupe(corpus[name])
        if series.category is Category.TRADITIONAL_INDEX:
            series, n_filled = forward_fill(series)
            if n_filled:
                imputed[name] = n_filled
        prepared[name] = series

    grid, columns = align_calendar(prepared)
    kept, drop_log = drop_degenerate(columns, flat_run_max, missing_ratio_max)

    cleaned: dict[str, MetricSeries] = {}
    for name, col in kept.items():
        series = MetricSeries(name, prepared[name].category, grid, col)
        cleaned[name] = interpolate_fill(series)
    return cleaned, drop_log, imputed


# ---------------------------------------------------------------------------
# scenario datasets
# ---------------------------------------------------------------------------

def slice_period(corpus: Mapping[str, MetricSeries], scenario: Scenario) -> Dataset:
    """Restrict a cleaned corpus to [period_start, corpus end].

    Metrics whose first observed value falls after the period start are
    excluded from the set, as are metrics with any missing value inside the
    slice (e.g. discontinued feeds).
    """
    if not corpus:
        raise ValueError("empty corpus")
    any_series = next(iter(corpus.values()))
    grid = any_series.dates
    if not grid:
        raise ValueError("corpus has no dates")
    if scenario.period_start > grid[-1] or scenario.period_start < grid[0]:
        raise ValueError(
            f"period start {scenario.period_start} outside corpus range {grid[0]}..{grid[-1]}")
    start_idx = (scenario.period_start - grid[0]).days
    dates = grid[start_idx:]
    if not dates:
        raise ValueError("empty date range after slicing")

    features: dict[str, np.ndarray] = {}
    categories: dict[str, Category] = {}
    for name in sorted(corpus):
        series = corpus[name]
        if series.dates != grid:
            raise ValueError(f"{name}: series not aligned to the corpus calendar")
        first = series.first_valid_date()
        if first is None or first > scenario.period_start:
            continue
        col = series.values[start_idx:]
        if np.isnan(col).any():
            continue
        features[name] = col
        categories[name] = series.category
    return Dataset(dates=dates, features=features, categories=categories)


def make_target(dataset: Dataset, index_price: MetricSeries, window: int) -> Dataset:
    """Attach the future index price as the target column.

    target[t] = index price at date t + window days; trailing rows without a
    future value are removed.
    """
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    price = index_price.value_map()
    future = np.array([price.get(d + timedelta(days=window), np.nan) for d in dataset.dates])
    available = ~np.isnan(future)
    if not available.any():
        raise ValueError("index price missing for all rows")
    last = int(np.flatnonzero(available)[-1])
    if not available[:last + 1].all():
        raise ValueError("index price has interior gaps over the dataset dates")
    out = dataset.rows(0, last + 1)
    out.target = future[:last + 1]
    out.window = window
    return out


def chronological_split(dataset: Dataset, holdout_fraction: float) -> tuple[Dataset, Dataset]:
    """Split rows into a leading train block and a trailing test block."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout fraction must be in (0, 1), got {holdout_fraction}")
    n = dataset.n_rows
    n_test = max(1, int(n * holdout_fraction))
    n_train = n - n_test
    if n_train < 1:
        raise ValueError(f"{n} rows leave no training data at holdout {holdout_fraction}")
    return dataset.rows(0, n_train), dataset.rows(n_train, n)
