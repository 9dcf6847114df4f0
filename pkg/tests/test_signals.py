import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ossr.errors import DataIntegrityError
from ossr.signals import (
    IDENTITY_STATS,
    FusionConfig,
    RawSignal,
    fft_magnitude,
    fit_standardization,
    fuse_many,
    fuse_time_frequency,
    next_pow2,
)


def direct_dft(x):
    """O(N^2) DFT, deliberately independent of numpy.fft."""
    n = x.size
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def test_next_pow2():
    assert [next_pow2(n) for n in (1, 2, 3, 4, 5, 4096, 5000)] == [1, 2, 4, 4, 8, 4096, 8192]


def test_raw_signal_rejects_bad_input():
    with pytest.raises(DataIntegrityError):
        RawSignal(np.array([0.0, np.nan]), 100.0)
    with pytest.raises(DataIntegrityError):
        RawSignal(np.array([]), 100.0)
    with pytest.raises(DataIntegrityError):
        RawSignal(np.ones(4), 0.0)


def test_fft_requires_two_samples():
    with pytest.raises(DataIntegrityError):
        fft_magnitude(np.array([1.0]))


def test_pure_tone_single_bin():
    n, rate, amp, k = 1024, 1024.0, 2.5, 37
    t = np.arange(n) / rate
    spec = fft_magnitude(RawSignal(amp * np.sin(2 * np.pi * k * t), rate))
    assert spec.magnitudes.size == n // 2 + 1
    assert spec.bin_width == pytest.approx(1.0)
    assert int(np.argmax(spec.magnitudes)) == k
    assert spec.magnitudes[k] == pytest.approx(amp * n / 2, rel=1e-9)
    others = np.delete(spec.magnitudes, k)
    assert others.max() < 1e-6 * amp * n


def test_zero_signal_gives_zero_spectrum():
    assert np.all(fft_magnitude(np.zeros(100)).magnitudes == 0.0)


def test_parseval_white_noise_against_direct_dft(rng):
    x = rng.standard_normal(4096)
    full = direct_dft(x)
    oracle = np.sum(np.abs(full) ** 2) / x.size
    assert oracle == pytest.approx(np.sum(x * x), rel=1e-9)
    spec = fft_magnitude(x)
    assert spec.n_fft == x.size
    assert spec.full_energy() / spec.n_fft == pytest.approx(oracle, rel=1e-9)
    assert np.allclose(spec.magnitudes, np.abs(full[: x.size // 2 + 1]), rtol=1e-9, atol=1e-9)


def test_zero_padding_to_power_of_two(rng):
    x = rng.standard_normal(5000)
    spec = fft_magnitude(RawSignal(x, 50000.0))
    assert spec.n_fft == 8192
    assert spec.magnitudes.size == 4097
    padded = np.concatenate([x, np.zeros(8192 - 5000)])
    assert np.allclose(spec.magnitudes[:50], np.abs(direct_dft(padded)[:50]), rtol=1e-9, atol=1e-8)


@given(
    n=st.integers(2, 700),
    seed=st.integers(0, 2**32 - 1),
    scale=st.floats(1e-3, 1e3),
)
def test_parseval_property(n, seed, scale):
    x = scale * np.random.default_rng(seed).standard_normal(n)
    spec = fft_magnitude(x)
    assert spec.full_energy() / spec.n_fft == pytest.approx(np.sum(x * x), rel=1e-9)


@given(seed=st.integers(0, 2**32 - 1), c=st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3))
def test_fft_linear_in_amplitude(seed, c):
    x = np.random.default_rng(seed).standard_normal(300)
    a = fft_magnitude(x).magnitudes
    b = fft_magnitude(c * x).magnitudes
    assert np.allclose(b, abs(c) * a, rtol=1e-9, atol=1e-12)


def test_fusion_dimension_and_determinism(rng):
    cfg = FusionConfig(window=1000, time_points=250)
    assert cfg.freq_points == 513
    s = RawSignal(rng.standard_normal(1200), 1000.0, 1)
    a = fuse_time_frequency(s, cfg)
    b = fuse_time_frequency(s, cfg)
    assert a.features.shape == (cfg.dim,) == (250 + 513,)
    assert np.array_equal(a.features, b.features)
    assert a.label == 1


def test_default_fusion_layout():
    cfg = FusionConfig()
    assert (cfg.time_points, cfg.freq_points, cfg.dim) == (4096, 2049, 6145)


def test_window_longer_than_signal():
    with pytest.raises(DataIntegrityError):
        fuse_time_frequency(RawSignal(np.ones(10), 10.0), FusionConfig(window=16, time_points=16))


def test_training_standardization_moments(rng):
    cfg = FusionConfig(window=256, time_points=128)
    train = [RawSignal(rng.standard_normal(300) * (1 + i % 3), 1000.0, i % 2) for i in range(30)]
    stats = fit_standardization(train, cfg)
    X, y = fuse_many(train, cfg, stats)
    time, freq = X[:, :128], X[:, 128:]
    for ch in (time, freq):
        assert abs(ch.mean()) < 1e-9
        assert ch.var() == pytest.approx(1.0, abs=1e-6)
    assert list(y) == [i % 2 for i in range(30)]


def test_statistics_reused_verbatim_on_other_splits(rng):
    cfg = FusionConfig(window=64, time_points=64)
    train = [RawSignal(rng.standard_normal(64), 100.0) for _ in range(5)]
    stats = fit_standardization(train, cfg)
    other = RawSignal(10 + rng.standard_normal(64), 100.0)
    fused = fuse_time_frequency(other, cfg, stats)
    assert fused.standardization == stats
    assert fused.features[:64] == pytest.approx((other.samples - stats.time_mean) / stats.time_scale)


def test_zero_variance_channel_scale_is_one():
    cfg = FusionConfig(window=8, time_points=8)
    stats = fit_standardization([RawSignal(np.zeros(8), 8.0)] * 3, cfg)
    assert stats.time_scale == 1.0 and stats.freq_scale == 1.0


def test_unlabeled_label_is_minus_one(rng):
    cfg = FusionConfig(window=16, time_points=16)
    _, y = fuse_many([RawSignal(rng.standard_normal(16), 1.0)], cfg, IDENTITY_STATS)
    assert y.tolist() == [-1]
