# test_evaluation.py
# Свипы Монте-Карло, разброс, отчеты и сравнение

from dataclasses import replace

import numpy as np
import pytest

from errors import ConfigError, EmptyDatasetError, EstimatorError
from evaluation import (
    SweepConfig,
    SweepReport,
    appendix_preset,
    compare,
    estimate_skewness,
    spread,
    sweep,
    synthesize_trials,
)


def _config(**overrides):
    values = dict(f_start=270.0, f_stop=290.0, f_step=10.0, trials_per_freq=200, seed=3, show_progress=False)
    values.update(overrides)
    return SweepConfig(**values)


def test_spread_cases():
    assert spread([279.0, 281.0], 0.1) == pytest.approx(2.1)
    assert spread([280.0], 0.1) == pytest.approx(0.1)
    assert spread([280.04, 280.06], 0.1) == pytest.approx(0.1)
    with pytest.raises(EmptyDatasetError):
        spread([], 0.1)
    with pytest.raises(ConfigError):
        spread([1.0], 0.0)


def test_grid_is_inclusive():
    np.testing.assert_allclose(_config().grid(), [270.0, 280.0, 290.0])
    np.testing.assert_allclose(_config(f_start=100.0, f_stop=101.0, f_step=0.2).grid(),
                               [100.0, 100.2, 100.4, 100.6, 100.8, 101.0])


def test_constant_estimator_statistics():
    def constant(samples, fs):
        return np.full(samples.shape[0], 257.0), np.ones(samples.shape[0], dtype=bool)

    report = sweep(_config(), estimator_fn=constant)
    assert report.targets.tolist() == [270.0, 280.0, 290.0]
    for row in report.rows:
        assert row.mean_hz == 257.0
        assert row.sigma_hz == 0.0
        assert row.spread_hz == pytest.approx(0.1)
        assert row.bias_hz == pytest.approx(257.0 - row.target_hz)
        assert (row.n, row.dropped) == (200, 0)


def test_dropped_trials_are_counted():
    def half_invalid(samples, fs):
        valid = np.arange(samples.shape[0]) % 2 == 0
        return np.full(samples.shape[0], 255.0), valid

    report = sweep(_config(), estimator_fn=half_invalid)
    assert all(row.n == 100 and row.dropped == 100 for row in report.rows)


def test_single_tone_sweep_is_reasonable():
    report = sweep(_config(estimator="st"))
    for row in report.rows:
        assert abs(row.bias_hz) < 2.0
        assert 0.0 < row.sigma_hz < 3.0
        assert row.spread_hz >= row.sigma_hz


def test_sweep_is_reproducible_across_worker_counts():
    a = sweep(_config(estimator="st", workers=1))
    b = sweep(_config(estimator="st", workers=3))
    assert a.to_csv() != ""
    assert [r.mean_hz for r in a.rows] == [r.mean_hz for r in b.rows]


def test_trials_are_shared_between_estimators():
    config = _config()
    np.testing.assert_array_equal(synthesize_trials(config, 280.0, 1), synthesize_trials(config, 280.0, 1))
    assert not np.array_equal(synthesize_trials(config, 280.0, 1), synthesize_trials(config, 280.0, 2))


def test_nn_sweep_requires_model():
    with pytest.raises(EstimatorError):
        sweep(_config(estimator="nn"))


def test_nn_sweep_runs_with_model(tiny_model):
    report = sweep(_config(estimator="nn", trials_per_freq=50), model=tiny_model)
    assert len(report.rows) == 3
    assert all(row.n == 50 for row in report.rows)


def test_report_csv_round_trip(tmp_path):
    report = sweep(_config(estimator="st"), keep_estimates=True)
    path = tmp_path / "report.csv"
    report.write_csv(str(path))
    text = path.read_text(encoding="utf-8")
    assert "# estimator=st" in text
    assert "target_hz,mean_hz,bias_hz,sigma_hz,spread_hz,n,dropped" in text

    restored = SweepReport.read_csv(str(path))
    assert restored.config["seed"] == "3"
    assert [r.sigma_hz for r in restored.rows] == [r.sigma_hz for r in report.rows]

    dump = tmp_path / "estimates.npz"
    report.dump_estimates(str(dump))
    with np.load(str(dump)) as data:
        assert sorted(data.files) == ["f_270.0000", "f_280.0000", "f_290.0000"]
        assert data["f_280.0000"].shape == (200,)


def test_skewness_needs_estimates():
    report = sweep(_config(estimator="st"))
    with pytest.raises(EstimatorError):
        report.skewness(280.0)
    kept = sweep(_config(estimator="st"), keep_estimates=True)
    assert np.isfinite(kept.skewness(280.0))
    assert estimate_skewness([1.0, 2.0, 3.0]) == pytest.approx(0.0)


def test_compare_ratios():
    def constant(value):
        def estimator(samples, fs):
            n = samples.shape[0]
            return value + np.linspace(-1.0, 1.0, n), np.ones(n, dtype=bool)
        return estimator

    wide = sweep(_config(), estimator_fn=constant(255.0))
    table = compare(wide, wide)
    assert table.mean_sigma_ratio == pytest.approx(1.0)
    assert table.mean_spread_ratio == pytest.approx(1.0)
    assert table.format().splitlines()[0] == "target_hz,sigma_ratio,spread_ratio"


def test_compare_rejects_different_grids():
    def constant(samples, fs):
        return np.full(samples.shape[0], 255.0), np.ones(samples.shape[0], dtype=bool)

    a = sweep(_config(), estimator_fn=constant)
    b = sweep(_config(f_stop=300.0), estimator_fn=constant)
    with pytest.raises(ConfigError):
        compare(a, b)


def test_appendix_presets():
    fast = appendix_preset("a1-fast")
    assert (fast.f_start, fast.f_stop, fast.f_step) == (50.0, 150.0, 0.5)
    assert (fast.sample_rate_hz, fast.n_samples) == (50_000.0, 500)
    assert fast.estimator == "st"
    with pytest.raises(ConfigError):
        appendix_preset("a2")


def test_invalid_sweep_config():
    with pytest.raises(ConfigError):
        _config(f_start=300.0, f_stop=200.0).validate()
    with pytest.raises(ConfigError):
        _config(trials_per_freq=0).validate()


def _point(target, **overrides):
    # сетка из одной точки target
    return _config(f_start=target, f_stop=target + 1.0, f_step=2.0, **overrides)


@pytest.mark.slow
def test_single_tone_spread_and_shape_at_gingerino():
    report = sweep(_point(280.0, estimator="st", noise="calibrated", trials_per_freq=100_000), keep_estimates=True)
    row = report.rows[0]
    assert row.n == 100_000
    assert row.spread_hz == pytest.approx(2.4, rel=0.3)
    assert abs(row.bias_hz) < 1.0
    assert abs(report.skewness(280.0)) < 0.5


@pytest.mark.slow
def test_single_tone_degrades_at_low_frequencies():
    low = sweep(_config(f_start=100.0, f_stop=150.0, f_step=2.0, trials_per_freq=2000, noise="calibrated"))
    band = sweep(_config(f_start=250.0, f_stop=310.0, f_step=2.0, trials_per_freq=2000, noise="calibrated"))
    assert low.band_mean("sigma_hz", 100.0, 150.0) >= 3.0 * band.band_mean("sigma_hz", 250.0, 310.0)


def test_longer_window_improves_single_tone_at_100_hz():
    point = dict(f_start=100.0, f_stop=101.0, f_step=2.0, trials_per_freq=4000, seed=3, show_progress=False)
    base = sweep(replace(appendix_preset("a1-base"), **point))
    longer = sweep(replace(appendix_preset("a1-long"), **point))
    assert base.targets.tolist() == [100.0] == longer.targets.tolist()
    assert base.rows[0].sigma_hz >= 5.0 * longer.rows[0].sigma_hz
