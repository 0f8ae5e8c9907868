"""Dataset construction: synthetic sine windows, CSV ingestion, normalization.

All downstream code consumes window stacks ``(n, L, F)`` of float64 values in
normalized [0, 1] units together with the :class:`NormalizationState` that
maps them back to original units.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, ParseError, ValidationError


@dataclass
class NormalizationState:
    """Per-feature min/max fitted on the full source columns."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if self.minimum.shape != self.maximum.shape or self.minimum.ndim != 1:
            raise ValidationError("minimum and maximum must be equal-length vectors")
        if np.any(self.maximum < self.minimum):
            raise ValidationError("maximum must be >= minimum per feature")

    @property
    def features(self) -> int:
        return self.minimum.size

    @property
    def constant_mask(self) -> np.ndarray:
        return self.maximum == self.minimum


def fit_normalization(values: np.ndarray) -> NormalizationState:
    values = np.asarray(values, dtype=np.float64)
    return NormalizationState(minimum=values.min(axis=-2), maximum=values.max(axis=-2))


def normalize(values: np.ndarray, state: NormalizationState) -> np.ndarray:
    """Affine map to [0, 1] per feature; constant features map to 0.5."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != state.features:
        raise ValidationError(
            f"values have {values.shape[-1]} features, state has {state.features}"
        )
    span = np.where(state.constant_mask, 1.0, state.maximum - state.minimum)
    out = (values - state.minimum) / span
    out[..., state.constant_mask] = 0.5
    return out


def denormalize(values: np.ndarray, state: NormalizationState) -> np.ndarray:
    """Inverse of :func:`normalize`; constant features recover their constant."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != state.features:
        raise ValidationError(
            f"values have {values.shape[-1]} features, state has {state.features}"
        )
    return values * (state.maximum - state.minimum) + state.minimum


def sine_generate(
    n: int, length: int, features: int = 5, seed: int = 0, return_params: bool = False
):
    """Random sine windows: per channel, frequency ~ U[0.05, 0.15] cycles/sample
    and phase ~ U[0, 2pi), rescaled from [-1, 1] to [0, 1].

    With ``return_params`` the drawn frequencies and phases come back too,
    shaped ``(n, 1, features)``.
    """
    if n < 1 or length < 1 or features < 1:
        raise ValidationError("n, length, and features must be >= 1")
    rng = np.random.default_rng(seed)
    freq = rng.uniform(0.05, 0.15, size=(n, 1, features))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n, 1, features))
    k = np.arange(length)[None, :, None]
    values = 0.5 * (np.sin(2 * np.pi * freq * k + phase) + 1.0)
    if return_params:
        return values, freq, phase
    return values


def slide_windows(values: np.ndarray, length: int, stride: int = 1) -> np.ndarray:
    """Contiguous windows of ``length`` rows at the given stride: ``(n, L, F)``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValidationError(f"values must be (rows, F), got {values.shape}")
    if stride < 1 or length < 1:
        raise ValidationError("length and stride must be >= 1")
    rows = values.shape[0]
    if rows < length:
        raise InsufficientDataError(f"{rows} rows cannot fill a window of {length}")
    count = (rows - length) // stride + 1
    starts = np.arange(count) * stride
    return values[starts[:, None] + np.arange(length)[None, :]]


def _looks_like_header(cells: list[str], columns: list[int]) -> bool:
    for c in columns:
        try:
            float(cells[c])
        except (ValueError, IndexError):
            return True
    return False


def csv_ingest(
    path,
    length: int = 24,
    stride: int = 1,
    feature_columns: list[str] | list[int] | None = None,
    delimiter: str = ",",
):
    """Read a delimited numeric file into normalized windows.

    Returns ``(windows, normalization_state)``. A header row is detected when
    the first row's selected cells are not all numeric; ``feature_columns``
    may name header columns or give 0-based indices (default: all columns).
    Min-max normalization is fitted on the full columns before windowing.
    """
    path = Path(path)
    with path.open(newline="") as handle:
        rows = [row for row in csv.reader(handle, delimiter=delimiter) if row]
    if not rows:
        raise InsufficientDataError(f"{path} is empty")

    header: list[str] | None = None
    if feature_columns and all(isinstance(c, str) for c in feature_columns):
        header = rows[0]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise ParseError(f"columns {missing} not found in header {header}")
        columns = [header.index(c) for c in feature_columns]
        data_rows = rows[1:]
        labels = list(feature_columns)
    else:
        columns = list(feature_columns) if feature_columns else list(range(len(rows[0])))
        if _looks_like_header(rows[0], columns):
            header = rows[0]
            data_rows = rows[1:]
        else:
            data_rows = rows
        labels = [header[c] if header and c < len(header) else c for c in columns]

    first_data_line = 2 if header is not None else 1
    values = np.empty((len(data_rows), len(columns)))
    for i, row in enumerate(data_rows):
        for j, c in enumerate(columns):
            try:
                values[i, j] = float(row[c])
            except (ValueError, IndexError) as exc:
                raise ParseError(
                    f"malformed numeric cell at row {first_data_line + i}, "
                    f"column {labels[j]!r}: {row[c] if c < len(row) else '<missing>'!r}",
                    row=first_data_line + i,
                    column=labels[j],
                ) from exc
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path} contains non-finite values")

    state = fit_normalization(values)
    windows = slide_windows(normalize(values, state), length, stride)
    return windows, state
