"""CSV ingestion, benchmark splits, standardization, windowing, synthetic data.

The ingestion dialect is the common benchmark layout: a header row, a first
timestamp column (kept only for ordering/echo), and numeric channels. Named
benchmark files get their channel/length descriptors validated and their
field-standard split rule (fixed month-based ranges for the ETT files,
70/10/20 otherwise). Windows never straddle a split boundary.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigError, DataError

# name -> (channels, rows, split rule, frequency)
BENCHMARKS = {
    "ETTh1": (7, 17420, "ett_hourly", "h"),
    "ETTh2": (7, 17420, "ett_hourly", "h"),
    "ETTm1": (7, 69680, "ett_minute", "15min"),
    "ETTm2": (7, 69680, "ett_minute", "15min"),
    "Weather": (21, 52696, "ratio_70_10_20", "10min"),
    "ECL": (321, 26304, "ratio_70_10_20", "h"),
    "Traffic": (862, 17544, "ratio_70_10_20", "h"),
    "Exchange": (8, 7588, "ratio_70_10_20", "d"),
}

# 12 / 4 / 4 months of hourly (720 h/month) and 15-minute (2880 rows/day) data
ETT_HOURLY_SPLIT = (8640, 2880, 2880)
ETT_MINUTE_SPLIT = (34560, 11520, 11520)

SPLIT_RULES = ("ett_hourly", "ett_minute", "ratio_70_10_20")


@dataclass
class SeriesFrame:
    """A loaded multichannel series: time-major values plus channel names."""

    values: np.ndarray            # [L, C] float64
    channels: list[str]
    index: list[str] = field(default_factory=list)  # raw first-column strings
    freq: str | None = None
    name: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be [rows, channels], got {self.values.shape}")
        if self.values.shape[1] != len(self.channels):
            raise DataError(f"{self.values.shape[1]} value columns vs "
                            f"{len(self.channels)} channel names")

    def __len__(self) -> int:
        return self.values.shape[0]

    def channel_pos(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise ConfigError(f"unknown channel {name!r}; available: {self.channels}") from None

    def select_channels(self, names: list[str]) -> "SeriesFrame":
        cols = [self.channel_pos(n) for n in names]
        return SeriesFrame(self.values[:, cols].copy(), list(names),
                           list(self.index), self.freq, self.name)


@dataclass
class DatasetSpec:
    """Where a dataset lives and how to split it; expectations for named benchmarks."""

    name: str
    path: str
    split_rule: str = "ratio_70_10_20"
    freq: str | None = None
    channels: int | None = None   # expected channel count, validated on load
    length: int | None = None     # expected row count, validated on load
    target: str | None = None     # None -> last column

    def __post_init__(self):
        if self.split_rule not in SPLIT_RULES:
            raise ConfigError(f"split rule must be one of {SPLIT_RULES}, "
                              f"got {self.split_rule!r}")


def dataset_spec_for_path(path: str, target: str | None = None) -> DatasetSpec:
    """Build a spec from a CSV path, recognizing benchmark files by stem."""
    stem = os.path.splitext(os.path.basename(path))[0]
    for name, (channels, length, rule, freq) in BENCHMARKS.items():
        if stem.lower() == name.lower():
            return DatasetSpec(name=name, path=path, split_rule=rule, freq=freq,
                               channels=channels, length=length, target=target)
    return DatasetSpec(name=stem, path=path, target=target)


def load_csv(path: str, spec: DatasetSpec | None = None) -> SeriesFrame:
    """Parse a benchmark-dialect CSV into a SeriesFrame.

    Raises DataError naming the offending row/column for ragged rows,
    non-numeric cells, or non-finite values; validates channel count and
    length when the spec carries expectations.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column plus channels, "
                            f"got header {header}")
        channels = [h.strip() for h in header[1:]]
        ncol = len(header)
        index: list[str] = []
        rows: list[list[float]] = []
        for i, row in enumerate(reader):
            if len(row) != ncol:
                raise DataError(f"{path}: row {i} has {len(row)} cells, expected {ncol}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                for j, v in enumerate(row[1:]):
                    try:
                        float(v)
                    except ValueError:
                        raise DataError(f"{path}: non-numeric cell {v!r} at row {i}, "
                                        f"column {channels[j]!r}") from None
                raise
            index.append(row[0])
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        i, j = bad[0]
        raise DataError(f"{path}: non-finite value at row {i}, column {channels[j]!r}")
    frame = SeriesFrame(values, channels, index,
                        freq=spec.freq if spec else None,
                        name=spec.name if spec else os.path.splitext(os.path.basename(path))[0])
    if spec is not None:
        if spec.channels is not None and len(channels) != spec.channels:
            raise DataError(f"{spec.name}: expected {spec.channels} channels, "
                            f"found {len(channels)}")
        if spec.length is not None and len(frame) != spec.length:
            raise DataError(f"{spec.name}: expected {spec.length} rows, found {len(frame)}")
    return frame


def make_splits(frame: SeriesFrame, spec: DatasetSpec) -> dict[str, tuple[int, int]]:
    """Disjoint, ordered train/val/test row ranges per the spec's split rule."""
    L = len(frame)
    if spec.split_rule == "ett_hourly":
        sizes = ETT_HOURLY_SPLIT
    elif spec.split_rule == "ett_minute":
        sizes = ETT_MINUTE_SPLIT
    else:
        train = int(L * 0.7)
        val = int(L * 0.1)
        sizes = (train, val, L - train - val)
    if sum(sizes) > L or min(sizes) < 1:
        raise ConfigError(f"series of length {L} too short for split rule "
                          f"{spec.split_rule!r} (needs {sum(sizes)})")
    bounds = np.cumsum((0,) + sizes)
    return {"train": (int(bounds[0]), int(bounds[1])),
            "val": (int(bounds[1]), int(bounds[2])),
            "test": (int(bounds[2]), int(bounds[3]))}


@dataclass
class Stats:
    mean: np.ndarray  # [C]
    std: np.ndarray   # [C], floored at 1e-8


def standardize(frame: SeriesFrame, train_range: tuple[int, int]) -> tuple[SeriesFrame, Stats]:
    """Z-score every split with train-range statistics only."""
    lo, hi = train_range
    if hi <= lo:
        raise ConfigError(f"empty train range {train_range}")
    train = frame.values[lo:hi]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    floored = std < 1e-8
    if floored.any():
        names = [frame.channels[i] for i in np.nonzero(floored)[0]]
        warnings.warn(f"near-constant channels {names}: std floored at 1e-8")
        std = np.where(floored, 1e-8, std)
    out = SeriesFrame((frame.values - mean) / std, list(frame.channels),
                      list(frame.index), frame.freq, frame.name)
    return out, Stats(mean=mean, std=std)


def unstandardize(values: np.ndarray, stats: Stats) -> np.ndarray:
    return values * stats.std + stats.mean


class WindowSample(NamedTuple):
    x: np.ndarray       # [sl, C]
    y: np.ndarray       # [pl, C], starts exactly at origin + sl
    origin: int


class WindowDataset:
    """Stride-1 sliding windows fully inside one split range.

    Origins run from range start to range end - sl - pl inclusive, so no
    sample reads across the split boundary. When the range cannot fit a
    single window the dataset is empty and flagged ``insufficient``.
    """

    def __init__(self, values: np.ndarray, split_range: tuple[int, int],
                 sl: int, pl: int, stride: int = 1):
        if stride < 1:
            raise ConfigError(f"stride must be >= 1, got {stride}")
        start, end = split_range
        self.values = values
        self.sl = sl
        self.pl = pl
        range_len = end - start
        count = (range_len - sl - pl) // stride + 1 if range_len >= sl + pl else 0
        self.insufficient = count == 0
        self.origins = start + stride * np.arange(max(count, 0))

    def __len__(self) -> int:
        return len(self.origins)

    def sample(self, i: int) -> WindowSample:
        o = int(self.origins[i])
        return WindowSample(x=self.values[o:o + self.sl],
                            y=self.values[o + self.sl:o + self.sl + self.pl],
                            origin=o)

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        xs = np.stack([self.values[int(self.origins[i]):int(self.origins[i]) + self.sl]
                       for i in indices])
        ys = np.stack([self.values[int(self.origins[i]) + self.sl:
                                   int(self.origins[i]) + self.sl + self.pl]
                       for i in indices])
        return xs, ys

    def iter_batches(self, batch_size: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for lo in range(0, len(self), batch_size):
            yield self.batch(range(lo, min(lo + batch_size, len(self))))


def window_dataset(values: np.ndarray, split_range: tuple[int, int],
                   sl: int, pl: int, stride: int = 1) -> WindowDataset:
    return WindowDataset(values, split_range, sl, pl, stride)


def synth_generate(length: int, channels: int = 1, period: float = 24.0,
                   trend_slope: float = 0.0, noise_sd: float = 0.0,
                   seed: int = 0, freq: str = "h") -> SeriesFrame:
    """Phase-shifted sinusoids plus linear trend plus seeded Gaussian noise.

    Channel c gets phase 2*pi*c/channels; the last channel is named "OT" so
    the usual target convention applies to synthetic files too.
    """
    if period < 2:
        raise ConfigError(f"period must be >= 2, got {period}")
    if length < 1 or channels < 1:
        raise ConfigError(f"length and channels must be >= 1, "
                          f"got {length}, {channels}")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)[:, None]
    phases = 2.0 * np.pi * np.arange(channels) / channels
    values = np.sin(2.0 * np.pi * t / period + phases[None, :])
    values += trend_slope * t
    if noise_sd > 0:
        values += rng.normal(0.0, noise_sd, size=values.shape)
    names = [f"s{i}" for i in range(channels - 1)] + ["OT"]
    start = datetime(2016, 7, 1)
    step = {"h": timedelta(hours=1), "15min": timedelta(minutes=15),
            "10min": timedelta(minutes=10), "d": timedelta(days=1)}.get(freq, timedelta(hours=1))
    index = [(start + i * step).strftime("%Y-%m-%d %H:%M:%S") for i in range(length)]
    return SeriesFrame(values, names, index, freq=freq, name="synthetic")


def write_csv(frame: SeriesFrame, path: str, index_name: str = "date") -> None:
    """Write in the ingestion dialect with full float precision (repr round-trip)."""
    index = frame.index if len(frame.index) == len(frame) else [str(i) for i in range(len(frame))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([index_name] + frame.channels)
        for i in range(len(frame)):
            writer.writerow([index[i]] + [repr(float(v)) for v in frame.values[i]])
