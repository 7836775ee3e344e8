"""Synthetic multi-domain corpora with a controllable shared component.

Each channel is a sum of sinusoids: `shared` components are identical across
every domain that lists them (same frequency, amplitude and phase), `own`
components are domain-specific, and Gaussian noise sits on top. Sinusoid
phases are a fixed function of the channel and component index, so only the
noise depends on the seed; the noise variance is then a known floor on the
achievable forecast MSE.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import DomainDataset
from .errors import ConfigError
from .rng import seeded_rng


@dataclass
class SynthSpec:
    name: str
    channels: int
    length: int
    splits: tuple  # (train, val, test)
    shared: list = field(default_factory=list)  # [(frequency, amplitude), ...]
    own: list = field(default_factory=list)
    noise_std: float = 0.1
    seed: int = 0


def _component(freq: float, amp: float, t: np.ndarray, channel: int,
               comp_index: int) -> np.ndarray:
    phase = 0.7 * channel + 1.3 * comp_index  # deterministic, seed-independent
    return amp * np.sin(2.0 * np.pi * freq * t + phase)


def generate(spec: SynthSpec, *, domain_id: int, lookback: int, horizon: int,
             stride: int, batch_size: int, oversample_weight: int = 1) -> DomainDataset:
    if spec.length <= 0 or spec.channels <= 0:
        raise ConfigError(f"{spec.name}: length and channels must be positive")
    if not spec.shared and not spec.own:
        raise ConfigError(f"{spec.name}: at least one sinusoid component is required")
    t = np.arange(spec.length, dtype=np.float64)
    rng = seeded_rng(spec.seed, "synth-noise", spec.name)
    series = np.empty((spec.length, spec.channels))
    for c in range(spec.channels):
        x = np.zeros(spec.length)
        for k, (freq, amp) in enumerate(spec.shared):
            x += _component(freq, amp, t, c, k)
        for k, (freq, amp) in enumerate(spec.own):
            x += _component(freq, amp, t, c, 100 + k)
        if spec.noise_std > 0:
            x += rng.normal(0.0, spec.noise_std, size=spec.length)
        series[:, c] = x
    train, val, test = spec.splits
    return DomainDataset(name=spec.name, domain_id=domain_id, series=series,
                         train_size=train, val_size=val, test_size=test,
                         lookback=lookback, horizon=horizon, stride=stride,
                         batch_size=batch_size, oversample_weight=oversample_weight)


def write_csv(ds: DomainDataset, path) -> None:
    """Emit the same CSV layout the loader reads (header + date column)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + [f"ch{i}" for i in range(ds.channels)])
        for t in range(len(ds.series)):
            writer.writerow([t] + [repr(float(v)) for v in ds.series[t]])
