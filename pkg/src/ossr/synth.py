"""Seeded synthetic stand-in for a six-category reactor vibration dataset.

Each category gets a simple invented waveform model:

====  ===================  ====================================================
 id   name                 model
====  ===================  ====================================================
 0    noise                AR(1)-coloured Gaussian noise with an elevated floor
 1    spike                baseline noise + Poisson-timed unipolar pulses
 2    jam                  cluster of drifting narrow-band tones + noise
 3    impact               exponentially decaying ring-down bursts + noise
 4    hydraulic            amplitude-modulated low-frequency carrier + noise
 5    self_check           deterministic linear chirp + noise
====  ===================  ====================================================

Every record is a pure function of ``(seed, class_id, index)``: each gets its
own ``SeedSequence``-derived stream, so records can be generated in any order.
Samples are rounded to float32 so the binary format round-trips exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dataset import Manifest, write_dataset
from .signals import RawSignal

CLASS_NAMES = ["noise", "spike", "jam", "impact", "hydraulic", "self_check"]
N_CLASSES = len(CLASS_NAMES)
SPLIT_RATIO = (8, 1, 1)
_SPLIT_STREAM = 0x5B11


@dataclass(frozen=True)
class NoiseParams:
    floor: float = 0.35
    ar_coef: tuple = (0.8, 0.9)


@dataclass(frozen=True)
class SpikeParams:
    rate: float = 100.0  # pulses per second
    amplitude: tuple = (1.2, 1.6)
    width: int = 6  # samples


@dataclass(frozen=True)
class JamParams:
    band: tuple = (6000.0, 8000.0)
    n_tones: int = 3
    spacing: float = 120.0
    drift: float = 300.0  # Hz over the record
    amplitude: tuple = (0.4, 0.5)


@dataclass(frozen=True)
class ImpactParams:
    decay: tuple = (1.5e-3, 2.5e-3)  # seconds
    resonance: tuple = (10000.0, 14000.0)
    bursts: tuple = (2, 3)
    amplitude: tuple = (1.2, 1.8)


@dataclass(frozen=True)
class HydraulicParams:
    carrier: tuple = (150.0, 400.0)
    modulation_freq: tuple = (15.0, 40.0)
    depth: tuple = (0.5, 0.7)
    amplitude: tuple = (0.5, 0.7)


@dataclass(frozen=True)
class ChirpParams:
    span: tuple = (1000.0, 15000.0)
    amplitude: float = 1.0


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 42
    records_per_class: int = 100
    record_length: int = 5000
    sample_rate: float = 50000.0
    noise_amplitude: float = 0.1  # baseline sensor noise for every class
    noise: NoiseParams = field(default_factory=NoiseParams)
    spike: SpikeParams = field(default_factory=SpikeParams)
    jam: JamParams = field(default_factory=JamParams)
    impact: ImpactParams = field(default_factory=ImpactParams)
    hydraulic: HydraulicParams = field(default_factory=HydraulicParams)
    chirp: ChirpParams = field(default_factory=ChirpParams)

    def __post_init__(self):
        if self.records_per_class < 1:
            raise ValueError("records_per_class must be >= 1")
        if self.record_length < 2 or self.sample_rate <= 0:
            raise ValueError("record_length must be >= 2 and sample_rate > 0")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")

    def to_dict(self):
        return dataclasses.asdict(self)


def _record_rng(seed: int, class_id: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, class_id, index]))


def _baseline(rng, cfg: GeneratorConfig, n: int) -> np.ndarray:
    # per-record floor jitter so classes overlap in noise level
    return cfg.noise_amplitude * rng.uniform(0.85, 1.15) * rng.standard_normal(n)


def _noise(rng, cfg, t):
    p = cfg.noise
    rho = rng.uniform(*p.ar_coef)
    white = rng.standard_normal(t.size)
    colored = lfilter([np.sqrt(1 - rho * rho)], [1.0, -rho], white)
    return p.floor * rng.uniform(0.9, 1.1) * colored + _baseline(rng, cfg, t.size)


def _spike(rng, cfg, t):
    p = cfg.spike
    x = _baseline(rng, cfg, t.size)
    duration = t.size / cfg.sample_rate
    count = max(1, rng.poisson(p.rate * duration))
    shape = np.sin(np.pi * (np.arange(p.width) + 0.5) / p.width)
    for onset in rng.integers(0, t.size - p.width, size=count):
        x[onset : onset + p.width] += rng.uniform(*p.amplitude) * shape
    return x


def _jam(rng, cfg, t):
    p = cfg.jam
    x = _baseline(rng, cfg, t.size)
    f0 = rng.uniform(*p.band)
    drift = rng.uniform(-p.drift, p.drift) / t[-1] if t[-1] > 0 else 0.0
    amp = rng.uniform(*p.amplitude)
    for k in range(p.n_tones):
        fk = f0 + (k - (p.n_tones - 1) / 2) * p.spacing
        phase = 2 * np.pi * (fk * t + 0.5 * drift * t * t) + rng.uniform(0, 2 * np.pi)
        x += amp / p.n_tones * np.sin(phase) * rng.uniform(0.9, 1.1)
    return x


def _impact(rng, cfg, t):
    p = cfg.impact
    x = _baseline(rng, cfg, t.size)
    n_bursts = int(rng.integers(p.bursts[0], p.bursts[1] + 1))
    for onset in rng.integers(0, int(0.8 * t.size), size=n_bursts):
        tau = rng.uniform(*p.decay)
        fr = rng.uniform(*p.resonance)
        tt = t[onset:] - t[onset]
        x[onset:] += rng.uniform(*p.amplitude) * np.exp(-tt / tau) * np.sin(2 * np.pi * fr * tt)
    return x


def _hydraulic(rng, cfg, t):
    p = cfg.hydraulic
    fc = rng.uniform(*p.carrier)
    fm = rng.uniform(*p.modulation_freq)
    m = rng.uniform(*p.depth)
    env = 1.0 + m * np.sin(2 * np.pi * fm * t + rng.uniform(0, 2 * np.pi))
    carrier = np.sin(2 * np.pi * fc * t + rng.uniform(0, 2 * np.pi))
    return rng.uniform(*p.amplitude) * env * carrier + _baseline(rng, cfg, t.size)


def _self_check(rng, cfg, t):
    p = cfg.chirp
    f0, f1 = p.span
    sweep = (f1 - f0) / t[-1] if t[-1] > 0 else 0.0
    chirp = p.amplitude * np.sin(2 * np.pi * (f0 * t + 0.5 * sweep * t * t))
    return chirp + _baseline(rng, cfg, t.size)


_GENERATORS = (_noise, _spike, _jam, _impact, _hydraulic, _self_check)


def generate_record(class_id: int, index: int, cfg: GeneratorConfig) -> RawSignal:
    if not 0 <= class_id < N_CLASSES:
        raise ValueError(f"class_id must be in 0..{N_CLASSES - 1}, got {class_id}")
    rng = _record_rng(cfg.seed, class_id, index)
    t = np.arange(cfg.record_length) / cfg.sample_rate
    x = _GENERATORS[class_id](rng, cfg, t)
    return RawSignal(x.astype(np.float32).astype(np.float64), cfg.sample_rate, class_id)


def generate_class(class_id: int, cfg: GeneratorConfig) -> list[RawSignal]:
    return [generate_record(class_id, i, cfg) for i in range(cfg.records_per_class)]


def split_counts(n: int) -> tuple[int, int, int]:
    """Stratified 8:1:1 sizes for one class; validation and test take the floor."""
    total = sum(SPLIT_RATIO)
    n_val = n * SPLIT_RATIO[1] // total
    n_test = n * SPLIT_RATIO[2] // total
    return n - n_val - n_test, n_val, n_test


def split_indices(class_id: int, cfg: GeneratorConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, class_id, _SPLIT_STREAM]))
    perm = rng.permutation(cfg.records_per_class)
    n_train, n_val, _ = split_counts(cfg.records_per_class)
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }


def generate_splits(cfg: GeneratorConfig) -> dict[str, list[RawSignal]]:
    splits = {"train": [], "val": [], "test": []}
    for c in range(N_CLASSES):
        records = generate_class(c, cfg)
        for name, idx in split_indices(c, cfg).items():
            splits[name].extend(records[i] for i in idx)
    return splits


def generate_dataset(cfg: GeneratorConfig, out_dir, fmt: str = "csv", provenance: dict | None = None) -> Manifest:
    """Generate all classes and write manifest + train/val/test files to ``out_dir``."""
    out_dir = Path(out_dir)
    manifest = Manifest(
        record_length=cfg.record_length,
        sample_rate=cfg.sample_rate,
        class_names=list(CLASS_NAMES),
        format=fmt,
        provenance={"generator": cfg.to_dict(), **(provenance or {})},
    )
    return write_dataset(out_dir, generate_splits(cfg), manifest)
