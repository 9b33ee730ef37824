"""Technical indicators derived from market series: SMA, EMA, RSI, Bollinger.

All functions take and return 1-D float arrays aligned to the input; the
warm-up positions that have no full window yet are NaN. Generated columns
are named `{KIND}{window}_{source}` (e.g. EMA100_market-cap).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Category, MetricSeries


class IndicatorKind(Enum):
    SMA = "SMA"
    EMA = "EMA"
    RSI = "RSI"
    BOLLINGER = "BOLLINGER"


@dataclass(frozen=True)
class IndicatorSpec:
    kind: IndicatorKind
    window: int
    source: str
    band_width: float = 2.0  # Bollinger only

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.kind is IndicatorKind.BOLLINGER and self.band_width <= 0:
            raise ValueError(f"band width must be > 0, got {self.band_width}")


DEFAULT_WINDOWS = (5, 10, 14, 20, 30, 100, 200)


def sma(series: np.ndarray, window: int) -> np.ndarray:
    """Simple moving average over the trailing `window` values."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=np.float64)
    if window == 1:
        return x.copy()
    out = np.full(x.shape, np.nan)
    if len(x) >= window:
        csum = np.cumsum(np.concatenate(([0.0], x)))
        out[window - 1:] = (csum[window:] - csum[:-window]) / window
    return out


def ema(series: np.ndarray, window: int) -> np.ndarray:
    """Exponential moving average, alpha = 2/(n+1), seeded with the first SMA."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=np.float64)
    if window == 1:
        return x.copy()
    out = np.full(x.shape, np.nan)
    if len(x) < window:
        return out
    alpha = 2.0 / (window + 1.0)
    level = float(np.mean(x[:window]))
    out[window - 1] = level
    for t in range(window, len(x)):
        level = alpha * x[t] + (1.0 - alpha) * level
        out[t] = level
    return out


def rsi(series: np.ndarray, window: int = 14) -> np.ndarray:
    """Relative strength index in [0, 100] with Wilder smoothing.

    All-gain windows read 100, all-loss windows 0, and a perfectly flat
    window (no gains, no losses) reads 50.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=np.float64)
    out = np.full(x.shape, np.nan)
    if len(x) <= window:
        return out
    delta = np.diff(x)
    gains = np.where(delta > 0, delta, 0.0)
    losses = np.where(delta < 0, -delta, 0.0)
    avg_gain = float(np.mean(gains[:window]))
    avg_loss = float(np.mean(losses[:window]))
    out[window] = _rsi_value(avg_gain, avg_loss)
    for t in range(window, len(delta)):
        avg_gain = (avg_gain * (window - 1) + gains[t]) / window
        avg_loss = (avg_loss * (window - 1) + losses[t]) / window
        out[t + 1] = _rsi_value(avg_gain, avg_loss)
    return out


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0.0:
        return 100.0 if avg_gain > 0.0 else 50.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def bollinger(series: np.ndarray, window: int = 20, band_width: float = 2.0
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mid, upper, lower) bands: SMA +- k * rolling population stddev."""
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    x = np.asarray(series, dtype=np.float64)
    mid = sma(x, window)
    std = np.full(x.shape, np.nan)
    if len(x) >= window:
        windows = np.lib.stride_tricks.sliding_window_view(x, window)
        std[window - 1:] = windows.std(axis=1)  # population convention
    upper = mid + band_width * std
    lower = mid - band_width * std
    return mid, upper, lower


def apply_spec(spec: IndicatorSpec, series: np.ndarray) -> dict[str, np.ndarray]:
    """Evaluate one indicator spec; Bollinger yields mid/upper/lower columns."""
    base = f"{spec.kind.value}{spec.window}"
    if spec.kind is IndicatorKind.SMA:
        return {f"{base}_{spec.source}": sma(series, spec.window)}
    if spec.kind is IndicatorKind.EMA:
        return {f"{base}_{spec.source}": ema(series, spec.window)}
    if spec.kind is IndicatorKind.RSI:
        return {f"{base}_{spec.source}": rsi(series, spec.window)}
    mid, upper, lower = bollinger(series, spec.window, spec.band_width)
    return {
        f"{base}_mid_{spec.source}": mid,
        f"{base}_upper_{spec.source}": upper,
        f"{base}_lower_{spec.source}": lower,
    }


def default_battery(sources: Iterable[str], windows: Sequence[int] = DEFAULT_WINDOWS) -> list[IndicatorSpec]:
    """SMA and EMA over the standard window set for each source metric."""
    specs = []
    for source in sources:
        for window in windows:
            specs.append(IndicatorSpec(IndicatorKind.SMA, window, source))
            specs.append(IndicatorSpec(IndicatorKind.EMA, window, source))
    return specs


def augment_corpus(corpus: Mapping[str, MetricSeries], specs: Sequence[IndicatorSpec]
                   ) -> dict[str, MetricSeries]:
    """Add indicator series (Technical category) derived from corpus metrics.

    Indicators are computed over each source's full history so warm-up
    draws on data before any period start. Specs whose source metric is not
    in the corpus are skipped; name collisions are an error.
    """
    out = dict(corpus)
    for spec in specs:
        source = corpus.get(spec.source)
        if source is None:
            continue
        valid = np.flatnonzero(~np.isnan(source.values))
        if valid.size == 0:
            continue
        lo, hi = int(valid[0]), int(valid[-1]) + 1
        for name, span_values in apply_spec(spec, source.values[lo:hi]).items():
            if name in out:
                raise ValueError(f"indicator column {name!r} collides with an existing metric")
            values = np.full(len(source.values), np.nan)
            values[lo:hi] = span_values
            out[name] = MetricSeries(name, Category.TECHNICAL, source.dates, values)
    return {name: out[name] for name in sorted(out)}
