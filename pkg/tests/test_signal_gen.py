# test_signal_gen.py
# Генератор синтетических окон, расщепление сидов, частота Саньяка, спектр шума

import math

import numpy as np
import pytest
from scipy import stats

from errors import DomainError, EmptyDatasetError, PreconditionError, RangeError
from rng_utils import STREAM_PARAMS, STREAM_RECORDS, check_seed, make_rng, split_seed
from signal_gen import (
    CALIBRATED_SIGMA_AMP,
    GenParams,
    ParamRanges,
    SignalWindow,
    colatitude_rad,
    generate_dataset,
    generate_pair,
    noise_asd,
    records_to_arrays,
    sagnac_frequency,
    sample_params,
    synthesize_batch,
    time_grid,
    white_noise_asd_level,
)

EARTH_OMEGA = 7.292115e-5


def test_default_ranges_are_valid():
    ranges = ParamRanges()
    ranges.validate()
    assert ranges.frequency_hz == (100.0, 500.0)
    assert ranges.n_samples == 50
    assert ranges.sample_rate_hz == 5000.0


def test_ranges_reject_empty_interval():
    with pytest.raises(RangeError):
        ParamRanges(offset=(0.2, -0.2)).validate()


def test_ranges_reject_nyquist_violation():
    with pytest.raises(RangeError):
        ParamRanges(sample_rate_hz=900.0).validate()


@pytest.mark.parametrize("overrides", [
    {"frequency_hz": (50.0, 150.0)},
    {"frequency_hz": (100.0, 600.0)},
    {"offset": (-0.3, 0.2)},
    {"trend_start": (0.5, 1.2)},
    {"trend_end": (0.6, 1.3)},
    {"sigma_amp": (0.0005, 0.01)},
    {"sigma_phase": (0.001, 0.02)},
])
def test_sampling_rejects_ranges_outside_bounds(overrides):
    ranges = ParamRanges(**overrides)
    ranges.validate()
    with pytest.raises(RangeError):
        sample_params(1, ranges)
    with pytest.raises(RangeError):
        generate_dataset(3, ranges)


def test_noise_free_presets_pass_bounds():
    ParamRanges.noiseless().check_bounds()
    ParamRanges.calibrated().check_bounds()
    ParamRanges(frequency_hz=(100.0, 100.0)).check_bounds()


def test_calibrated_preset_fixes_amplitude_noise():
    ranges = ParamRanges.calibrated()
    assert ranges.sigma_amp == (CALIBRATED_SIGMA_AMP, CALIBRATED_SIGMA_AMP)
    params = sample_params(7, ranges)
    assert params.sigma_amp == CALIBRATED_SIGMA_AMP


def test_sample_params_within_ranges_and_deterministic():
    ranges = ParamRanges()
    for seed in range(200):
        params = sample_params(seed, ranges)
        for name, (lo, hi) in ranges.intervals():
            assert lo <= getattr(params, name) <= hi
        assert params.seed == seed
    assert sample_params(42, ranges) == sample_params(42, ranges)
    assert sample_params(42, ranges) != sample_params(43, ranges)


def test_sampled_frequencies_are_uniform():
    freqs = [sample_params(split_seed(9, i), ParamRanges()).frequency_hz for i in range(2000)]
    result = stats.kstest(freqs, "uniform", args=(100.0, 400.0))
    assert result.pvalue > 1e-3


def test_noiseless_pair_is_pure_sine():
    record = generate_pair(GenParams(frequency_hz=280.0))
    t = time_grid(50, 5000.0)
    expected = np.sin(2 * np.pi * 280.0 * t)
    assert record.clean.samples[0] == 0.0
    np.testing.assert_allclose(record.clean.samples, expected, atol=1e-12)
    np.testing.assert_allclose(record.noisy.samples, expected, atol=1e-12)
    assert record.frequency_hz == 280.0


def test_offset_is_not_scaled_by_trend():
    params = GenParams(frequency_hz=250.0, offset=0.1, trend_start=0.6, trend_end=1.2)
    record = generate_pair(params)
    t = time_grid(50, 5000.0)
    amplitude = np.linspace(0.6, 1.2, 50)
    expected = amplitude * np.sin(2 * np.pi * 250.0 * t) + 0.1
    np.testing.assert_allclose(record.noisy.samples, expected, atol=1e-12)


def test_pair_is_deterministic_per_seed():
    params = sample_params(123)
    a = generate_pair(params)
    b = generate_pair(params)
    np.testing.assert_array_equal(a.noisy.samples, b.noisy.samples)
    other = generate_pair(sample_params(124))
    assert not np.array_equal(a.noisy.samples, other.noisy.samples)


def test_pair_rejects_nyquist_violation():
    with pytest.raises(PreconditionError):
        generate_pair(GenParams(frequency_hz=3000.0))


def test_window_is_read_only_and_finite():
    window = SignalWindow(np.ones(10))
    with pytest.raises(ValueError):
        window.samples[0] = 2.0
    with pytest.raises(PreconditionError):
        SignalWindow(np.array([0.0, np.nan]))


def test_dataset_is_reproducible_and_sliceable():
    full = list(generate_dataset(10, master_seed=5))
    part = list(generate_dataset(3, master_seed=5, start=4))
    assert len(full) == 10
    for a, b in zip(full[4:7], part):
        np.testing.assert_array_equal(a.noisy.samples, b.noisy.samples)
        assert a.frequency_hz == b.frequency_hz

    noisy, clean, freqs = records_to_arrays(full)
    assert noisy.shape == (10, 50) and clean.shape == (10, 50) and freqs.shape == (10,)
    assert len(set(freqs.tolist())) == 10


def test_dataset_rejects_zero_size():
    with pytest.raises(EmptyDatasetError):
        generate_dataset(0)


def test_split_seed_streams_are_distinct():
    assert split_seed(0, 1, STREAM_RECORDS) != split_seed(0, 1, STREAM_PARAMS)
    assert split_seed(0, 1) != split_seed(0, 2)
    assert split_seed(7, 3) == split_seed(7, 3)
    with pytest.raises(PreconditionError):
        check_seed(-1)


def test_sagnac_square_cavity():
    side = 3.6
    at_pole = sagnac_frequency(EARTH_OMEGA, side ** 2, 4 * side, 632.8e-9, 0.0)
    assert at_pole == pytest.approx(414.9, abs=0.1)

    gran_sasso = sagnac_frequency(EARTH_OMEGA, side ** 2, 4 * side, 632.8e-9, colatitude_rad(42.4))
    assert gran_sasso == pytest.approx(280.0, abs=1.0)

    equator = sagnac_frequency(EARTH_OMEGA, side ** 2, 4 * side, 632.8e-9, math.pi / 2)
    assert abs(equator) < 1e-9


@pytest.mark.parametrize("kwargs", [
    dict(omega=0.0, area=1.0, perimeter=4.0, wavelength=632.8e-9, theta=0.0),
    dict(omega=1.0, area=-1.0, perimeter=4.0, wavelength=632.8e-9, theta=0.0),
    dict(omega=1.0, area=1.0, perimeter=4.0, wavelength=632.8e-9, theta=4.0),
])
def test_sagnac_domain_errors(kwargs):
    with pytest.raises(DomainError):
        sagnac_frequency(**kwargs)


def test_noise_asd_matches_white_level():
    sigma = 0.006
    params = [
        GenParams(frequency_hz=280.0, sigma_amp=sigma, sigma_phase=0.0, seed=split_seed(1, i))
        for i in range(1000)
    ]
    freqs, asd = noise_asd(params)
    level = white_noise_asd_level(sigma, 5000.0)
    assert level == pytest.approx(sigma * math.sqrt(2 / 5000.0))
    inner = asd[1:-1]
    assert freqs.shape == asd.shape
    assert np.mean(inner) == pytest.approx(level, rel=0.1)


def test_noise_asd_rejects_empty_input():
    with pytest.raises(EmptyDatasetError):
        noise_asd([])


def test_amplitude_noise_matches_sigma():
    # 2000 окон по 50 отсчетов: 10^5 значений остатка
    count, n = 2000, 50
    rng = make_rng(21)
    freqs = rng.uniform(100.0, 500.0, size=count)
    phases = rng.uniform(-np.pi, np.pi, size=count)
    offsets = rng.uniform(-0.2, 0.2, size=count)
    starts = rng.uniform(0.6, 1.2, size=count)
    ends = rng.uniform(0.6, 1.2, size=count)
    sigma = np.full(count, CALIBRATED_SIGMA_AMP)
    noisy, _ = synthesize_batch(freqs, phases, offsets, starts, ends, sigma, np.zeros(count), n, 5000.0, rng)

    t = time_grid(n, 5000.0)
    trend = np.linspace(starts, ends, n, axis=1)
    residual = noisy - trend * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None]) - offsets[:, None]
    assert residual.size == 100_000
    assert np.std(residual, ddof=1) == pytest.approx(CALIBRATED_SIGMA_AMP, rel=0.02)


@pytest.mark.slow
def test_sampled_phase_is_uniform():
    phases = [sample_params(split_seed(11, i)).phase_rad for i in range(100_000)]
    result = stats.kstest(phases, "uniform", args=(-np.pi, 2 * np.pi))
    assert result.pvalue > 0.01
