"""Seasonal-trend decomposition of series windows.

Two decomposers share one output contract (trend + seasonal + residual equals
the input):

* :func:`stl_decompose` -- classic robust STL (cycle-subseries loess, low-pass
  filter, trend loess, optional bisquare outer loop), delegated to
  ``statsmodels.tsa.seasonal.STL`` per feature.
* :func:`fourier_split` -- a DFT partition into low bins (trend) and the
  remainder (seasonal), with an identically-zero residual.

Styles extracted from real samples are the (trend, seasonal) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from statsmodels.tsa.seasonal import STL

from .errors import ConfigError, ValidationError


def _next_odd_at_least(x: float) -> int:
    n = int(np.ceil(x))
    return n if n % 2 == 1 else n + 1


@dataclass(frozen=True)
class StlParams:
    """STL configuration. ``None`` smoother lengths use the classic defaults.

    Defaults that depend on the period are resolved against the *effective*
    period: series shorter than two full periods fall back to
    ``max(2, L // 2)`` so the decomposition stays total on short windows.
    """

    period: int = 24
    robust: bool = True
    inner_iterations: int = 2
    outer_iterations: int | None = None
    seasonal_smoother: int = 7
    trend_smoother: int | None = None
    lowpass_smoother: int | None = None

    def __post_init__(self):
        if self.period < 2:
            raise ConfigError(f"period must be >= 2, got {self.period}")
        if self.inner_iterations < 1:
            raise ConfigError("inner_iterations must be >= 1")
        if self.outer_iterations is not None and self.outer_iterations < 0:
            raise ConfigError("outer_iterations must be >= 0")
        for name in ("seasonal_smoother", "trend_smoother", "lowpass_smoother"):
            v = getattr(self, name)
            if v is None:
                continue
            if v < 3 or v % 2 == 0:
                raise ConfigError(f"{name} must be an odd integer >= 3, got {v}")

    def effective_period(self, length: int) -> int:
        if length >= 2 * self.period:
            return self.period
        return max(2, length // 2)

    def resolve(self, length: int) -> "StlParams":
        """Concrete parameters for a series of ``length`` samples."""
        period = self.effective_period(length)
        outer = self.outer_iterations
        if outer is None:
            outer = 5 if self.robust else 0
        trend = self.trend_smoother
        if trend is None:
            trend = _next_odd_at_least(1.5 * period / (1 - 1.5 / self.seasonal_smoother))
        lowpass = self.lowpass_smoother
        if lowpass is None:
            # smallest odd integer >= period, bumped above the period where the
            # classic filter requires a strictly longer window
            lowpass = _next_odd_at_least(period)
            if lowpass <= period:
                lowpass += 2
        return replace(
            self,
            period=period,
            outer_iterations=outer,
            trend_smoother=trend,
            lowpass_smoother=lowpass,
        )


@dataclass(frozen=True)
class StyleComponents:
    """Additive decomposition of one window: trend + seasonal + residual = input."""

    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True)
class DataStyle:
    """The conditioning pair extracted from a real sample."""

    trend: np.ndarray
    seasonal: np.ndarray


def _validate_series(series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ValidationError(f"series must have shape (L, F), got {series.shape}")
    if not np.all(np.isfinite(series)):
        raise ValidationError("series contains non-finite values")
    return series


def stl_decompose(series: np.ndarray, params: StlParams) -> StyleComponents:
    """Robust STL of each feature independently."""
    series = _validate_series(series)
    length = series.shape[0]
    if length < 4:
        raise ValidationError(f"series too short for STL: length {length} < 4")
    p = params.resolve(length)
    trend = np.empty_like(series)
    seasonal = np.empty_like(series)
    for f in range(series.shape[1]):
        res = STL(
            series[:, f],
            period=p.period,
            seasonal=p.seasonal_smoother,
            trend=p.trend_smoother,
            low_pass=p.lowpass_smoother,
            robust=p.robust,
        ).fit(inner_iter=p.inner_iterations, outer_iter=p.outer_iterations)
        trend[:, f] = res.trend
        seasonal[:, f] = res.seasonal
    return StyleComponents(trend=trend, seasonal=seasonal, residual=series - trend - seasonal)


def extract_style(sample: np.ndarray, params: StlParams) -> DataStyle:
    """Trend and seasonal of one real sample; the residual is discarded."""
    parts = stl_decompose(sample, params)
    return DataStyle(trend=parts.trend, seasonal=parts.seasonal)


def stl_robustness_weights(series: np.ndarray, params: StlParams) -> np.ndarray:
    """Final bisquare weights per observation (all ones when not robust)."""
    series = _validate_series(series)
    p = params.resolve(series.shape[0])
    weights = np.empty_like(series)
    for f in range(series.shape[1]):
        res = STL(
            series[:, f],
            period=p.period,
            seasonal=p.seasonal_smoother,
            trend=p.trend_smoother,
            low_pass=p.lowpass_smoother,
            robust=p.robust,
        ).fit(inner_iter=p.inner_iterations, outer_iter=p.outer_iterations)
        weights[:, f] = res.weights
    return weights


def fourier_split(series: np.ndarray, cutoff_bin: int) -> StyleComponents:
    """Split into DFT bins [0, cutoff_bin] (trend) and the rest (seasonal)."""
    series = _validate_series(series)
    length = series.shape[0]
    if not 1 <= cutoff_bin < length // 2:
        raise ValidationError(
            f"cutoff_bin must satisfy 1 <= cutoff < {length // 2}, got {cutoff_bin}"
        )
    spectrum = np.fft.rfft(series, axis=0)
    low = np.zeros_like(spectrum)
    low[: cutoff_bin + 1] = spectrum[: cutoff_bin + 1]
    trend = np.fft.irfft(low, n=length, axis=0)
    return StyleComponents(
        trend=trend, seasonal=series - trend, residual=np.zeros_like(series)
    )


def decompose_batch(windows: np.ndarray, params: StlParams):
    """STL of a stack ``(n, L, F)``; returns (trend, seasonal, residual) stacks."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3:
        raise ValidationError(f"windows must have shape (n, L, F), got {windows.shape}")
    trend = np.empty_like(windows)
    seasonal = np.empty_like(windows)
    residual = np.empty_like(windows)
    for i in range(windows.shape[0]):
        parts = stl_decompose(windows[i], params)
        trend[i] = parts.trend
        seasonal[i] = parts.seasonal
        residual[i] = parts.residual
    return trend, seasonal, residual
