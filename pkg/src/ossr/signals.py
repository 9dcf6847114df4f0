"""Signal pre-processing: magnitude spectra and time/frequency fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataIntegrityError

UNLABELED = None


@dataclass(frozen=True)
class RawSignal:
    """One sensor record. ``label`` is a class id or ``None`` when unlabeled."""

    samples: np.ndarray
    sample_rate: float
    label: Optional[int] = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DataIntegrityError("signal must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(samples)):
            bad = int(np.flatnonzero(~np.isfinite(samples))[0])
            raise DataIntegrityError(f"non-finite amplitude at sample {bad}")
        if not (self.sample_rate > 0 and np.isfinite(self.sample_rate)):
            raise DataIntegrityError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.label is not None and (int(self.label) != self.label or self.label < 0):
            raise DataIntegrityError(f"label must be a non-negative integer, got {self.label!r}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class Spectrum:
    """One-sided magnitude spectrum of a zero-padded record."""

    magnitudes: np.ndarray
    bin_width: float
    n_fft: int

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.magnitudes.size) * self.bin_width

    def full_energy(self) -> float:
        """Energy of the full two-sided spectrum, sum |X_k|^2 over k = 0..n_fft-1."""
        m2 = self.magnitudes ** 2
        # DC and Nyquist bins appear once in the two-sided spectrum, the rest twice.
        return float(m2[0] + m2[-1] + 2.0 * m2[1:-1].sum())


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _as_samples(signal) -> tuple[np.ndarray, float]:
    if isinstance(signal, RawSignal):
        return signal.samples, signal.sample_rate
    x = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataIntegrityError("non-finite amplitude in input")
    return x, 1.0


def fft_magnitude(signal) -> Spectrum:
    """One-sided FFT magnitude of ``signal`` zero-padded to the next power of two.

    Accepts a :class:`RawSignal` or a bare array (unit sample rate).
    """
    x, rate = _as_samples(signal)
    if x.size < 2:
        raise DataIntegrityError("fft_magnitude needs at least 2 samples")
    n_fft = next_pow2(x.size)
    mags = np.abs(np.fft.rfft(x, n=n_fft))
    return Spectrum(magnitudes=mags, bin_width=rate / n_fft, n_fft=n_fft)


@dataclass(frozen=True)
class FusionConfig:
    window: int = 4096
    time_points: int = 4096

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if not 1 <= self.time_points <= self.window:
            raise ValueError("time_points must lie in [1, window]")

    @property
    def freq_points(self) -> int:
        return next_pow2(self.window) // 2 + 1

    @property
    def dim(self) -> int:
        return self.time_points + self.freq_points

    def to_dict(self):
        return {"window": self.window, "time_points": self.time_points}


@dataclass(frozen=True)
class FusionStats:
    """Frozen per-channel standardization fitted on a training split."""

    time_mean: float
    time_scale: float
    freq_mean: float
    freq_scale: float

    def to_dict(self):
        return {
            "time_mean": self.time_mean,
            "time_scale": self.time_scale,
            "freq_mean": self.freq_mean,
            "freq_scale": self.freq_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in ("time_mean", "time_scale", "freq_mean", "freq_scale")})


IDENTITY_STATS = FusionStats(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class FusedSample:
    features: np.ndarray
    label: Optional[int]
    standardization: FusionStats = field(default=IDENTITY_STATS)


def _raw_channels(signal: RawSignal, cfg: FusionConfig) -> tuple[np.ndarray, np.ndarray]:
    if len(signal) < cfg.window:
        raise DataIntegrityError(
            f"window {cfg.window} is longer than the signal ({len(signal)} samples)"
        )
    win = signal.samples[: cfg.window]
    if cfg.time_points == cfg.window:
        time = win.copy()
    else:
        idx = (np.arange(cfg.time_points) * cfg.window) // cfg.time_points
        time = win[idx]
    freq = np.log1p(fft_magnitude(RawSignal(win, signal.sample_rate)).magnitudes)
    return time, freq


def _scale(values: np.ndarray) -> float:
    s = float(values.std())
    # zero-variance channel: leave it unscaled
    return s if s > 0.0 else 1.0


def fit_standardization(signals: Sequence[RawSignal], cfg: FusionConfig) -> FusionStats:
    """Channel-level mean and scale over every training record."""
    if len(signals) == 0:
        raise DataIntegrityError("cannot fit standardization on an empty split")
    chans = [_raw_channels(s, cfg) for s in signals]
    t = np.concatenate([c[0] for c in chans])
    f = np.concatenate([c[1] for c in chans])
    return FusionStats(float(t.mean()), _scale(t), float(f.mean()), _scale(f))


def fuse_time_frequency(signal: RawSignal, cfg: FusionConfig, stats: FusionStats = IDENTITY_STATS) -> FusedSample:
    time, freq = _raw_channels(signal, cfg)
    feats = np.concatenate(
        [(time - stats.time_mean) / stats.time_scale, (freq - stats.freq_mean) / stats.freq_scale]
    )
    return FusedSample(features=feats, label=signal.label, standardization=stats)


def fuse_many(signals: Sequence[RawSignal], cfg: FusionConfig, stats: FusionStats) -> tuple[np.ndarray, np.ndarray]:
    """Stack fused features into an (n, D) matrix; labels use -1 for unlabeled records."""
    X = np.empty((len(signals), cfg.dim))
    y = np.empty(len(signals), dtype=np.int64)
    for i, s in enumerate(signals):
        X[i] = fuse_time_frequency(s, cfg, stats).features
        y[i] = -1 if s.label is None else s.label
    return X, y
