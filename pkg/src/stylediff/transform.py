"""Invertible conversion between series windows and image tensors.

A window of length ``L`` with ``F`` features maps to an ``F x H x W`` image:
column ``j`` of the image holds the ``embedding`` consecutive samples starting
at ``j * delay``. Columns whose span runs past the end of the window read from
an edge-replicated extension of the series, so every sample lands in at least
one cell whenever ``(width - 1) * delay + embedding >= L``. The inverse map
averages all image cells that hold a given (real) sample; replicated cells are
ignored, which makes the round trip exact.

Both maps are linear and accept a leading batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, TransformError, ValidationError


@dataclass(frozen=True)
class TransformParams:
    """Geometry of the delay embedding.

    embedding : image height, number of consecutive samples per column
    delay     : stride between the starting samples of adjacent columns
    width     : number of image columns
    """

    embedding: int = 8
    delay: int = 3
    width: int = 8

    def __post_init__(self):
        for name in ("embedding", "delay", "width"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")

    @property
    def height(self) -> int:
        return self.embedding

    def natural_columns(self, length: int) -> int:
        """Columns fully determined by the stride pattern, for a window of ``length``."""
        if length < self.embedding:
            raise TransformError(
                f"window length {length} is shorter than embedding {self.embedding}"
            )
        return (length - self.embedding) // self.delay + 1

    def padded_length(self) -> int:
        """Length of the edge-extended series addressed by all ``width`` columns."""
        return (self.width - 1) * self.delay + self.embedding


@lru_cache(maxsize=64)
def _cell_maps(params: TransformParams, length: int):
    """Per-(params, length) index grids for the forward and inverse maps."""
    m, d, w = params.embedding, params.delay, params.width
    rows = np.arange(m)[:, None]
    cols = np.arange(w)[None, :]
    sample_of_cell = cols * d + rows            # (H, W) padded sample index
    gather = np.minimum(sample_of_cell, length - 1)

    # Inverse: binary sum matrix over real cells, then divide by coverage counts.
    flat = sample_of_cell.ravel()
    real = flat < length
    sum_matrix = np.zeros((length, m * w))
    sum_matrix[flat[real], np.nonzero(real)[0]] = 1.0
    counts = sum_matrix.sum(axis=1)
    return gather, sum_matrix, counts


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{what} contains non-finite values")


def to_image(window: np.ndarray, params: TransformParams) -> np.ndarray:
    """Embed a window ``(L, F)`` (or batch ``(..., L, F)``) as ``(..., F, H, W)``."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim < 2:
        raise ValidationError(f"window must have shape (..., L, F), got {window.shape}")
    length = window.shape[-2]
    if length < params.embedding:
        raise TransformError(
            f"window length {length} is shorter than embedding {params.embedding}"
        )
    if params.width < params.natural_columns(length):
        raise TransformError(
            f"width {params.width} cannot hold the "
            f"{params.natural_columns(length)} natural columns of a length-{length} window"
        )
    _check_finite(window, "window")
    gather, _, _ = _cell_maps(params, length)
    # (..., L, F)[..., gather, :] -> (..., H, W, F) -> (..., F, H, W)
    image = window[..., gather, :]
    return np.moveaxis(image, -1, -3)


def from_image(image: np.ndarray, params: TransformParams, length: int) -> np.ndarray:
    """Invert :func:`to_image` by overlap averaging; returns ``(..., L, F)``.

    Cells that read from the edge-replicated extension never contribute, so
    arbitrary values there leave the reconstruction unchanged.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 3 or image.shape[-2:] != (params.height, params.width):
        raise ValidationError(
            f"image must have shape (..., F, {params.height}, {params.width}), "
            f"got {image.shape}"
        )
    if length < params.embedding:
        raise TransformError(
            f"target length {length} is shorter than embedding {params.embedding}"
        )
    _check_finite(image, "image")
    _, sum_matrix, counts = _cell_maps(params, length)
    if np.any(counts == 0):
        missing = int(np.nonzero(counts == 0)[0][0])
        raise TransformError(
            f"sample {missing} of a length-{length} window is not covered by any "
            f"image cell; increase width or reduce delay"
        )
    flat = image.reshape(image.shape[:-2] + (-1,))        # (..., F, H*W)
    series = np.einsum("lc,...fc->...lf", sum_matrix, flat)
    return series / counts[:, None]
