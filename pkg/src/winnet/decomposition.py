"""Trend/seasonal decomposition on window grids and raw series.

The model reshapes a mapped sequence of length n*n into an n x n grid whose
rows are consecutive time steps and whose columns stride by n. Decomposition
splits such a grid (or a 1-D series) into a low-frequency trend via mean
pooling and the seasonal residual. Grid pooling is preceded by trend-padding:
the border is filled with temporally adjacent samples of the flattened
sequence instead of zeros, so edge means stay on-distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (Tape, Tensor, avgpool1d, avgpool2d, reshape, sub,
                     take_last, zero_pad2d)


@dataclass
class WindowGrid:
    """An [B, C, n, n] tensor; cell (i, j) is flattened-sequence index i*n + j."""

    values: Tensor
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"sub-window size must be >= 2, got {self.n}")
        if self.values.ndim < 2 or self.values.shape[-2:] != (self.n, self.n):
            raise ShapeError(f"grid values {self.values.shape} do not end in "
                             f"({self.n}, {self.n})")

    @property
    def flat_len(self) -> int:
        return self.n * self.n


@dataclass
class DecompPair:
    """Trend and seasonal grids of identical shape; trend + seasonal == source."""

    trend: Tensor
    seasonal: Tensor

    def __post_init__(self):
        if self.trend.shape != self.seasonal.shape:
            raise ShapeError(f"trend {self.trend.shape} vs seasonal "
                             f"{self.seasonal.shape} shape mismatch")


def trend_pad_index_map(n: int, q: int) -> np.ndarray:
    """Flat source index (into the n*n sequence) for each cell of the padded grid.

    Row direction (consecutive time): padded row for grid row i covers
    flattened indices i*n - q .. i*n + n - 1 + q, clamped into [0, n*n) so the
    sequence ends replicate their nearest element. Column direction (stride-n
    time): the needed samples fall outside the mapped sequence, so top/bottom
    pads replicate grid rows 0 and n-1, and corners the nearest corner cell.
    Returns an int array of shape [(n+2q)**2].
    """
    if not 1 <= q < n:
        raise ConfigError(f"pad width must satisfy 1 <= q < n, got q={q}, n={n}")
    p = n + 2 * q
    r = np.arange(p)[:, None]
    s = np.arange(p)[None, :]
    middle = (r >= q) & (r < q + n)
    src_middle = np.clip((r - q) * n + s - q, 0, n * n - 1)
    edge_row = np.where(r < q, 0, n - 1)
    src_edge = edge_row * n + np.clip(s - q, 0, n - 1)
    return np.where(middle, src_middle, src_edge).reshape(-1)


def trend_padding(grid: WindowGrid, q: int, tape: Tape | None = None) -> Tensor:
    """Extend an [B, C, n, n] grid to [B, C, n+2q, n+2q] with sequence neighbors."""
    n = grid.n
    idx = trend_pad_index_map(n, q)
    lead = grid.values.shape[:-2]
    flat = reshape(grid.values, lead + (n * n,), tape)
    padded = take_last(flat, idx, tape)
    return reshape(padded, lead + (n + 2 * q, n + 2 * q), tape)


def tdd_decompose(grid: WindowGrid, k: int, tape: Tape | None = None,
                  pad_mode: str = "trend") -> DecompPair:
    """Two-dimensional hybrid decomposition of a window grid.

    Pads by q = (k-1)/2 per side (trend-padding by default, plain zeros for
    the ablation), mean-pools with a k x k window back to n x n, and takes the
    seasonal term as the unpadded grid minus the trend. Differentiable
    end-to-end.
    """
    if k % 2 == 0 or k < 3:
        raise ConfigError(f"pooling window must be odd and >= 3, got {k}")
    q = (k - 1) // 2
    if pad_mode == "trend":
        padded = trend_padding(grid, q, tape)
    elif pad_mode == "zero":
        padded = zero_pad2d(grid.values, q, tape)
    else:
        raise ConfigError(f"unknown pad mode {pad_mode!r}")
    trend = avgpool2d(padded, k, tape)
    seasonal = sub(grid.values, trend, tape)
    return DecompPair(trend=trend, seasonal=seasonal)


def moving_avg_decompose_1d(series: Tensor, k: int,
                            tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    """Classic 1-D decomposition: edge-replicated moving average + residual."""
    if k % 2 == 0 or k < 3:
        raise ConfigError(f"moving-average window must be odd and >= 3, got {k}")
    q = (k - 1) // 2
    L = series.shape[-1]
    idx = np.clip(np.arange(-q, L + q), 0, L - 1)
    padded = take_last(series, idx, tape)
    trend = avgpool1d(padded, k, tape)
    seasonal = sub(series, trend, tape)
    return trend, seasonal


class LagCorrelation(NamedTuple):
    lag: int
    r: float
    degenerate: bool


def lagged_correlation(a, b, max_lag: int) -> list[LagCorrelation]:
    """Pearson correlation of a[0:L-lag] with b[lag:L] for lag = 0..max_lag.

    Zero-variance overlaps report r = 0 with the degenerate flag set instead
    of NaN, so analysis pipelines stay total.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"lagged_correlation: lengths differ, {a.size} vs {b.size}")
    L = a.size
    if L <= max_lag + 2:
        raise ConfigError(f"series length {L} must exceed max_lag + 2 = {max_lag + 2}")
    out = []
    for lag in range(max_lag + 1):
        x = a[: L - lag]
        y = b[lag:]
        xc = x - x.mean()
        yc = y - y.mean()
        sx = float(np.sqrt((xc * xc).sum()))
        sy = float(np.sqrt((yc * yc).sum()))
        if sx == 0.0 or sy == 0.0:
            out.append(LagCorrelation(lag, 0.0, True))
        else:
            out.append(LagCorrelation(lag, float((xc * yc).sum() / (sx * sy)), False))
    return out
