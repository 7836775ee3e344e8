"""Dataset ingestion, splits, windowing, normalization and patching.

A domain's series is loaded once, z-scored per channel with training-split
statistics, and then served as channel-independent sliding windows. Each
window is instance-normalized on entry to the model and the prediction is
mapped back through the stored window statistics.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from math import ceil

import numpy as np

from .errors import ConfigError, DataFormatError

INSTANCE_EPS = 1e-5


@dataclass
class DomainDataset:
    """One client's multivariate series plus its split/window geometry."""

    name: str
    domain_id: int
    series: np.ndarray  # (time, channels), float64
    train_size: int
    val_size: int
    test_size: int
    lookback: int
    horizon: int
    stride: int
    batch_size: int
    oversample_weight: int = 1
    channel_means: np.ndarray | None = None  # train-split stats once standardized
    channel_stds: np.ndarray | None = None

    def __post_init__(self):
        self.series = np.ascontiguousarray(self.series, dtype=np.float64)
        if self.series.ndim != 2:
            raise DataFormatError(f"{self.name}: series must be 2-d (time, channels)")
        for label, v in (("train", self.train_size), ("val", self.val_size),
                         ("test", self.test_size), ("lookback", self.lookback),
                         ("horizon", self.horizon), ("stride", self.stride),
                         ("batch_size", self.batch_size),
                         ("oversample_weight", self.oversample_weight)):
            if v <= 0:
                raise ConfigError(f"{self.name}: {label} must be positive, got {v}")
        if self.train_size + self.val_size + self.test_size > len(self.series):
            raise ConfigError(
                f"{self.name}: splits ({self.train_size}, {self.val_size}, "
                f"{self.test_size}) exceed series length {len(self.series)}")

    def ensure_trainable(self) -> None:
        """At least one training window must exist before a run starts."""
        if self.lookback + self.horizon > self.train_size:
            raise ConfigError(
                f"{self.name}: lookback+horizon ({self.lookback + self.horizon}) "
                f"exceeds train split {self.train_size}; no training window exists")

    @property
    def channels(self) -> int:
        return self.series.shape[1]

    def split_bounds(self, split: str) -> tuple[int, int]:
        if split == "train":
            return 0, self.train_size
        if split == "val":
            return self.train_size, self.train_size + self.val_size
        if split == "test":
            start = self.train_size + self.val_size
            return start, start + self.test_size
        raise ConfigError(f"unknown split '{split}'")


@dataclass
class WindowSample:
    """A single channel-independent (input, target) window pair."""

    values: np.ndarray  # (lookback,)
    target: np.ndarray  # (horizon,)
    channel: int
    position: int  # start offset within the split
    mean: float | None = None  # instance stats, set by instance_normalize
    std: float | None = None


@dataclass
class PatchSet:
    patches: np.ndarray  # (num_patches, patch_len)
    patch_len: int
    stride: int


def num_patches(lookback: int, patch_len: int, stride: int) -> int:
    return ceil((lookback - patch_len) / stride) + 1


def load_csv(path, *, name: str, domain_id: int, splits, lookback: int,
             horizon: int, stride: int, batch_size: int,
             oversample_weight: int = 1, channels: int | None = None) -> DomainDataset:
    """Load a benchmark-style CSV: header row, `date` first, one channel per column."""
    rows: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if not header or header[0].strip().lower() != "date":
            raise DataFormatError(f"{path}: first column must be 'date', got {header[:1]}")
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataFormatError(
                    f"{path}: row {line_no} has {len(row)} columns, expected {width}")
            try:
                rows.append([float(cell) for cell in row[1:]])
            except ValueError:
                bad = next(i for i, cell in enumerate(row[1:], start=2)
                           if not _is_float(cell))
                raise DataFormatError(
                    f"{path}: non-numeric value at row {line_no}, column {bad}") from None
    series = np.asarray(rows, dtype=np.float64)
    if series.ndim != 2 or series.size == 0:
        raise DataFormatError(f"{path}: no data rows")
    if channels is not None and series.shape[1] != channels:
        raise DataFormatError(
            f"{path}: expected {channels} channels, file has {series.shape[1]}")
    train, val, test = splits
    return DomainDataset(name=name, domain_id=domain_id, series=series,
                         train_size=train, val_size=val, test_size=test,
                         lookback=lookback, horizon=horizon, stride=stride,
                         batch_size=batch_size, oversample_weight=oversample_weight)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def standardize(ds: DomainDataset) -> DomainDataset:
    """Z-score each channel by its training-split population statistics."""
    train = ds.series[:ds.train_size]
    means = train.mean(axis=0)
    stds = train.std(axis=0)  # population std
    zero = stds == 0.0
    if zero.any():
        warnings.warn(
            f"{ds.name}: {int(zero.sum())} constant channel(s) in the train split; "
            "using std=1 for them")
        stds = np.where(zero, 1.0, stds)
    series = (ds.series - means) / stds
    return replace(ds, series=series, channel_means=means, channel_stds=stds)


class WindowSet:
    """Lazy, order-stable sequence of WindowSamples for one dataset split.

    Sample order is window-position major, channel minor, so permuting the
    channel columns permutes samples without changing their contents.
    """

    def __init__(self, ds: DomainDataset, split: str, fraction: float = 1.0):
        if not 0.0 < fraction <= 1.0:
            raise ConfigError(f"window fraction must be in (0, 1], got {fraction}")
        start, stop = ds.split_bounds(split)
        eligible = ceil(fraction * (stop - start))
        span = ds.lookback + ds.horizon
        if eligible < span:
            raise DataFormatError(
                f"{ds.name}/{split}: {eligible} eligible steps cannot hold a "
                f"{span}-step window")
        self.ds = ds
        self.split = split
        self.start = start
        self.positions = eligible - span + 1  # stride-1 sliding windows
        self.channels = ds.channels

    def __len__(self) -> int:
        return self.positions * self.channels

    def __getitem__(self, i: int) -> WindowSample:
        if not 0 <= i < len(self):
            raise IndexError(i)
        pos, channel = divmod(i, self.channels)
        lo = self.start + pos
        mid = lo + self.ds.lookback
        hi = mid + self.ds.horizon
        return WindowSample(values=self.ds.series[lo:mid, channel].copy(),
                            target=self.ds.series[mid:hi, channel].copy(),
                            channel=channel, position=pos)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def extract_windows(ds: DomainDataset, split: str, fraction: float = 1.0) -> WindowSet:
    return WindowSet(ds, split, fraction)


def instance_normalize(w: WindowSample) -> WindowSample:
    """Standardize one window by its own mean/population-std; stats retained."""
    mean = float(w.values.mean())
    std = float(w.values.std())
    values = (w.values - mean) / (std + INSTANCE_EPS)
    return WindowSample(values=values, target=w.target, channel=w.channel,
                        position=w.position, mean=mean, std=std)


def denormalize(pred: np.ndarray, mean: float, std: float) -> np.ndarray:
    return pred * (std + INSTANCE_EPS) + mean


def make_patches(values: np.ndarray, patch_len: int, stride: int) -> PatchSet:
    """Cut a window into patches; overruns repeat the final value."""
    lookback = len(values)
    if patch_len > lookback:
        raise ConfigError(f"patch length {patch_len} exceeds window length {lookback}")
    count = num_patches(lookback, patch_len, stride)
    idx = np.minimum(
        np.arange(count)[:, None] * stride + np.arange(patch_len)[None, :],
        lookback - 1)
    return PatchSet(patches=values[idx], patch_len=patch_len, stride=stride)
