# bench.py
# Замер задержки оценки одного окна (ST или сеть) относительно бюджета кадра 10 мс

import logging
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from tqdm import tqdm

from errors import PreconditionError
from estimators import make_estimator
from nn_core import Model
from rng_utils import STREAM_BENCH, check_seed, make_rng
from signal_gen import ParamRanges, SignalWindow, synthesize_batch
from single_tone import Method

logger = logging.getLogger(__name__)

MIN_BENCH_WINDOWS = 100
FRAME_BUDGET_US = 10_000.0
WARMUP_WINDOWS = 20


@dataclass
class BenchReport:
    """Перцентили задержки (мкс) и пропускная способность."""
    windows: int
    p50_us: float
    p95_us: float
    p99_us: float
    throughput_per_s: float
    method: str

    @property
    def within_budget(self) -> bool:
        return self.p99_us < FRAME_BUDGET_US

    def format(self) -> str:
        return (
            f"method={self.method} windows={self.windows} "
            f"p50={self.p50_us:.1f}us p95={self.p95_us:.1f}us p99={self.p99_us:.1f}us "
            f"throughput={self.throughput_per_s:.0f}/s budget_ok={self.within_budget}"
        )


def _bench_windows(n_windows: int, ranges: ParamRanges, seed: int) -> np.ndarray:
    rng = make_rng(seed, STREAM_BENCH)

    def draw(interval):
        return rng.uniform(*interval, size=n_windows)

    noisy, _ = synthesize_batch(
        draw(ranges.frequency_hz), draw(ranges.phase_rad), draw(ranges.offset),
        draw(ranges.trend_start), draw(ranges.trend_end),
        draw(ranges.sigma_amp), draw(ranges.sigma_phase),
        ranges.n_samples, ranges.sample_rate_hz, rng,
    )
    return noisy


def run_bench(
    method,
    n_windows: int = 10_000,
    model: Optional[Model] = None,
    seed: int = 0,
    ranges: Optional[ParamRanges] = None,
    show_progress: bool = False,
) -> BenchReport:
    """
    Меряет сквозную задержку оценки по одному окну (как в потоковой маске).

    Окна готовятся заранее; в замер входит только вызов оценщика.
    Перед замером выполняется прогрев на нескольких окнах.

    Args:
        method: 'st' или 'nn'
        n_windows: Число окон (>= 100)
        model: Модель (обязательна для 'nn')
        seed: Сид генерации окон
        ranges: Интервалы генератора (по умолчанию штатные)
        show_progress: Показывать tqdm

    Returns:
        BenchReport

    Raises:
        PreconditionError: n_windows < 100
        EstimatorError: Для сети не передана модель
    """
    if n_windows < MIN_BENCH_WINDOWS:
        raise PreconditionError(f"n_windows должен быть >= {MIN_BENCH_WINDOWS}, получено {n_windows}")
    check_seed(seed)
    method = Method.parse(method) if not isinstance(method, Method) else method
    if ranges is None:
        ranges = ParamRanges()
        if method is Method.NEURAL_NET and model is not None:
            ranges = replace(
                ranges,
                n_samples=model.input_length,
                sample_rate_hz=float(model.hyperparams.get("sample_rate_hz", ranges.sample_rate_hz)),
            )
    estimator = make_estimator(method, model)

    samples = _bench_windows(n_windows, ranges, seed)
    windows = [SignalWindow(row, ranges.sample_rate_hz) for row in samples]

    for window in windows[:WARMUP_WINDOWS]:
        estimator(window)

    latencies = np.empty(n_windows, dtype=np.float64)
    started = time.perf_counter_ns()
    for i, window in enumerate(tqdm(windows, desc=f"bench {method.value}", disable=not show_progress)):
        t0 = time.perf_counter_ns()
        estimator(window)
        latencies[i] = time.perf_counter_ns() - t0
    total_s = (time.perf_counter_ns() - started) / 1e9

    p50, p95, p99 = np.percentile(latencies / 1e3, [50, 95, 99])
    report = BenchReport(
        windows=n_windows,
        p50_us=float(p50),
        p95_us=float(p95),
        p99_us=float(p99),
        throughput_per_s=n_windows / total_s if total_s > 0 else float("inf"),
        method=method.value,
    )
    if not report.within_budget:
        logger.warning("p99 = %.1f мкс превышает бюджет кадра %.0f мкс", report.p99_us, FRAME_BUDGET_US)
    return report
