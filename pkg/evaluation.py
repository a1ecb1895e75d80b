# evaluation.py
# Свипы Монте-Карло по сетке частот: среднее, смещение, sigma и разброс оценок для любого оценщика

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import stats
from tqdm import tqdm

from config import load_dataclass_config
from errors import ConfigError, EmptyDatasetError, EstimatorError
from estimators import estimate_batch
from nn_core import Model
from rng_utils import STREAM_SWEEP, check_seed, make_rng, split_seed
from signal_gen import ParamRanges, synthesize_batch
from single_tone import Method
from trainer import ranges_for_preset

logger = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH_HZ = 0.1
REPORT_COLUMNS = ["target_hz", "mean_hz", "bias_hz", "sigma_hz", "spread_hz", "n", "dropped"]

BatchEstimator = Callable[[np.ndarray, float], Tuple[np.ndarray, np.ndarray]]


@dataclass
class SweepConfig:
    """
    Конфигурация свипа.

    Настольный масштаб по умолчанию: 10 000 испытаний на частоту и шаг 2 Гц
    (полный масштаб - 100 000 и 0.2 Гц - задается флагами).
    """
    f_start: float = 100.0
    f_stop: float = 500.0
    f_step: float = 2.0
    trials_per_freq: int = 10_000
    noise: str = "default"
    sample_rate_hz: float = 5000.0
    n_samples: int = 50
    estimator: str = "st"
    seed: int = 0
    bin_width_hz: float = DEFAULT_BIN_WIDTH_HZ
    pad_factor: int = 1
    workers: int = 1
    show_progress: bool = True

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Нарушены инварианты сетки или параметров
        """
        if not self.f_start < self.f_stop:
            raise ConfigError(f"f_start ({self.f_start}) должен быть меньше f_stop ({self.f_stop})")
        if not self.f_step > 0:
            raise ConfigError(f"f_step должен быть > 0, получено {self.f_step}")
        if self.trials_per_freq < 1:
            raise ConfigError("trials_per_freq должен быть >= 1")
        if not self.bin_width_hz > 0:
            raise ConfigError("bin_width_hz должен быть > 0")
        if self.workers < 1:
            raise ConfigError("workers должен быть >= 1")
        Method.parse(self.estimator)
        check_seed(self.seed)
        self.ranges().validate()

    def ranges(self) -> ParamRanges:
        """Интервалы генератора (частота подставляется для каждой точки сетки)."""
        return ranges_for_preset(
            self.noise,
            frequency_hz=(self.f_start, self.f_stop),
            sample_rate_hz=self.sample_rate_hz,
            n_samples=self.n_samples,
        )

    def grid(self) -> np.ndarray:
        """Точки сетки f_start, f_start + step, ... <= f_stop (включительно)."""
        count = int(math.floor((self.f_stop - self.f_start) / self.f_step + 1e-9)) + 1
        return np.round(self.f_start + self.f_step * np.arange(count), 9)

    def echo(self) -> Dict[str, str]:
        return {key: str(value) for key, value in asdict(self).items() if key != "show_progress"}

    @classmethod
    def from_file(cls, path: str, base: Optional["SweepConfig"] = None) -> "SweepConfig":
        return load_dataclass_config(cls, path, base)


APPENDIX_PRESETS = {
    # 5 кГц, 10 мс: штатный режим
    "a1-base": dict(sample_rate_hz=5000.0, n_samples=50),
    # 50 кГц, те же 10 мс
    "a1-fast": dict(sample_rate_hz=50_000.0, n_samples=500),
    # 5 кГц, в десять раз длиннее окно
    "a1-long": dict(sample_rate_hz=5000.0, n_samples=500),
}


def appendix_preset(name: str, base: Optional[SweepConfig] = None) -> SweepConfig:
    """
    Конфигурация исследования только ST на 50-150 Гц с шагом 0.5 Гц.

    Raises:
        ConfigError: Неизвестный пресет
    """
    if name not in APPENDIX_PRESETS:
        raise ConfigError(f"Неизвестный пресет '{name}', допустимы: {', '.join(APPENDIX_PRESETS)}")
    base = base or SweepConfig()
    return replace(base, f_start=50.0, f_stop=150.0, f_step=0.5, estimator="st", **APPENDIX_PRESETS[name])


def spread(estimates, bin_width: float = DEFAULT_BIN_WIDTH_HZ) -> float:
    """
    Ширина между крайними занятыми бинами гистограммы оценок.

    Бины шириной bin_width привязаны к нулю; результат
    (центр max занятого бина - центр min занятого бина) + bin_width.

    Args:
        estimates: Оценки, Гц
        bin_width: Ширина бина, Гц

    Returns:
        Разброс, Гц

    Raises:
        EmptyDatasetError: Пустой массив
        ConfigError: bin_width <= 0
    """
    values = np.asarray(estimates, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise EmptyDatasetError("Нельзя вычислить разброс пустого набора оценок")
    if not bin_width > 0:
        raise ConfigError(f"bin_width должен быть > 0, получено {bin_width}")
    # округление до 9 знаков убирает ошибки вида 279.0 / 0.1 = 2789.9999999999995
    bins = np.floor(np.round(values / bin_width, 9))
    return float((bins.max() - bins.min()) * bin_width + bin_width)


def estimate_skewness(estimates) -> float:
    """Выборочная асимметрия распределения оценок (проверка формы гистограммы)."""
    values = np.asarray(estimates, dtype=np.float64).reshape(-1)
    if values.size < 3:
        raise EmptyDatasetError("Для асимметрии нужно хотя бы 3 оценки")
    return float(stats.skew(values))


@dataclass
class SweepRow:
    target_hz: float
    mean_hz: float
    bias_hz: float
    sigma_hz: float
    spread_hz: float
    n: int
    dropped: int


@dataclass
class SweepReport:
    """Метрики по каждой целевой частоте плюс эхо конфигурации."""
    rows: List[SweepRow]
    config: Dict[str, str] = field(default_factory=dict)
    estimates: Optional[Dict[float, np.ndarray]] = None

    @property
    def targets(self) -> np.ndarray:
        return np.array([row.target_hz for row in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=np.float64)

    def band_mean(self, name: str, f_lo: float, f_hi: float) -> float:
        """Среднее столбца по точкам сетки в [f_lo, f_hi]."""
        targets = self.targets
        mask = (targets >= f_lo - 1e-9) & (targets <= f_hi + 1e-9)
        if not mask.any():
            raise EmptyDatasetError(f"В отчете нет точек в диапазоне [{f_lo}, {f_hi}] Гц")
        return float(np.nanmean(self.column(name)[mask]))

    def skewness(self, target_hz: float) -> float:
        """
        Асимметрия распределения оценок на частоте target_hz.

        Raises:
            EstimatorError: Отчет построен без сохранения оценок
        """
        if self.estimates is None:
            raise EstimatorError("Оценки не сохранялись: запустите свип с keep_estimates=True")
        key = min(self.estimates, key=lambda t: abs(t - target_hz))
        return estimate_skewness(self.estimates[key])

    def to_csv(self) -> str:
        buffer = io.StringIO()
        for key, value in self.config.items():
            buffer.write(f"# {key}={value}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([
                repr(row.target_hz), repr(row.mean_hz), repr(row.bias_hz),
                repr(row.sigma_hz), repr(row.spread_hz), row.n, row.dropped,
            ])
        return buffer.getvalue()

    def write_csv(self, path: str) -> None:
        """Пишет отчет: строки '# key=value' с конфигурацией, затем CSV."""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(self.to_csv())

    @classmethod
    def read_csv(cls, path: str) -> "SweepReport":
        """
        Читает отчет, записанный write_csv.

        Raises:
            ConfigError: Нет нужных столбцов
        """
        config: Dict[str, str] = {}
        data_lines = []
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition("=")
                    config[key.strip()] = value.strip()
                elif line.strip():
                    data_lines.append(line)
        reader = csv.DictReader(data_lines)
        if reader.fieldnames != REPORT_COLUMNS:
            raise ConfigError(f"Неверный заголовок отчета {path}: {reader.fieldnames}")
        rows = [
            SweepRow(
                target_hz=float(r["target_hz"]), mean_hz=float(r["mean_hz"]), bias_hz=float(r["bias_hz"]),
                sigma_hz=float(r["sigma_hz"]), spread_hz=float(r["spread_hz"]),
                n=int(r["n"]), dropped=int(r["dropped"]),
            )
            for r in reader
        ]
        return cls(rows=rows, config=config)

    def dump_estimates(self, path: str) -> None:
        """
        Сохраняет сырые оценки в .npz (массив на каждую частоту, ключ 'f_<target>').

        Raises:
            EstimatorError: Оценки не сохранялись
        """
        if self.estimates is None:
            raise EstimatorError("Оценки не сохранялись: запустите свип с keep_estimates=True")
        arrays = {f"f_{target:.4f}": values for target, values in self.estimates.items()}
        np.savez_compressed(path, **arrays)


def _row_from_estimates(target: float, estimates: np.ndarray, trials: int, bin_width: float) -> SweepRow:
    n = int(estimates.size)
    if n == 0:
        return SweepRow(target, math.nan, math.nan, math.nan, math.nan, 0, trials)
    mean = float(np.mean(estimates))
    sigma = float(np.std(estimates, ddof=1)) if n > 1 else 0.0
    return SweepRow(
        target_hz=float(target),
        mean_hz=mean,
        bias_hz=mean - float(target),
        sigma_hz=sigma,
        spread_hz=spread(estimates, bin_width),
        n=n,
        dropped=trials - n,
    )


def synthesize_trials(config: SweepConfig, target_hz: float, freq_index: int) -> np.ndarray:
    """
    Зашумленные окна для одной частоты сетки: частота фиксирована, остальное случайно.

    Сид точки: split_seed(config.seed, freq_index, STREAM_SWEEP), поэтому свипы
    разных оценщиков с одним сидом видят одни и те же окна.
    """
    ranges = config.ranges()
    rng = make_rng(split_seed(config.seed, freq_index, STREAM_SWEEP))
    trials = config.trials_per_freq

    def draw(interval):
        lo, hi = interval
        return rng.uniform(lo, hi, size=trials)

    phase = draw(ranges.phase_rad)
    offset = draw(ranges.offset)
    trend_start = draw(ranges.trend_start)
    trend_end = draw(ranges.trend_end)
    sigma_amp = draw(ranges.sigma_amp)
    sigma_phase = draw(ranges.sigma_phase)
    noisy, _ = synthesize_batch(
        np.full(trials, target_hz), phase, offset, trend_start, trend_end,
        sigma_amp, sigma_phase, ranges.n_samples, ranges.sample_rate_hz, rng,
    )
    return noisy


def sweep(
    config: SweepConfig,
    model: Optional[Model] = None,
    estimator_fn: Optional[BatchEstimator] = None,
    keep_estimates: bool = False,
) -> SweepReport:
    """
    Свип Монте-Карло по сетке частот.

    Для каждой частоты генерируется trials_per_freq окон, оценщик применяется к
    каждому, невалидные оценки считаются отброшенными (столбец dropped).

    Args:
        config: Конфигурация свипа
        model: Модель (обязательна для estimator='nn')
        estimator_fn: Собственный пакетный оценщик (samples, fs) -> (freqs, valid);
            если задан, config.estimator игнорируется
        keep_estimates: Сохранить сырые оценки в отчете

    Returns:
        SweepReport

    Raises:
        ConfigError: Некорректная конфигурация
        EstimatorError: Для сети не передана модель
    """
    config.validate()
    method = Method.parse(config.estimator)
    if estimator_fn is None:
        if method is Method.NEURAL_NET and model is None:
            raise EstimatorError("Для свипа сети нужна модель (--model)")

        def estimator_fn(samples, fs):
            return estimate_batch(method, samples, fs, model=model, pad_factor=config.pad_factor)

    grid = config.grid()
    logger.info("Свип %s: %d частот x %d испытаний", config.estimator, grid.size, config.trials_per_freq)

    def run_point(item):
        index, target = item
        noisy = synthesize_trials(config, float(target), index)
        freqs, valid = estimator_fn(noisy, config.sample_rate_hz)
        valid = np.asarray(valid, dtype=bool) & np.isfinite(freqs)
        kept = np.asarray(freqs, dtype=np.float64)[valid]
        dropped = config.trials_per_freq - kept.size
        if dropped:
            logger.warning("%.4f Гц: отброшено %d испытаний", target, dropped)
        return _row_from_estimates(float(target), kept, config.trials_per_freq, config.bin_width_hz), kept

    items = list(enumerate(grid))
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(tqdm(pool.map(run_point, items), total=len(items),
                            desc=f"свип {config.estimator}", disable=not config.show_progress))

    rows = [row for row, _ in results]
    estimates = {row.target_hz: kept for row, kept in results} if keep_estimates else None
    return SweepReport(rows=rows, config=config.echo(), estimates=estimates)


@dataclass
class ComparisonRow:
    target_hz: float
    sigma_ratio: float
    spread_ratio: float


@dataclass
class ComparisonTable:
    """Отношения sigma_a / sigma_b и spread_a / spread_b по сетке и их средние."""
    rows: List[ComparisonRow]
    mean_sigma_ratio: float
    mean_spread_ratio: float

    def format(self) -> str:
        lines = ["target_hz,sigma_ratio,spread_ratio"]
        lines += [f"{r.target_hz!r},{r.sigma_ratio:.6g},{r.spread_ratio:.6g}" for r in self.rows]
        lines.append(f"mean,{self.mean_sigma_ratio:.6g},{self.mean_spread_ratio:.6g}")
        return "\n".join(lines) + "\n"


def compare(report_a: SweepReport, report_b: SweepReport) -> ComparisonTable:
    """
    Сравнивает два отчета на одной сетке.

    Raises:
        ConfigError: Сетки частот не совпадают
    """
    ta, tb = report_a.targets, report_b.targets
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-6):
        raise ConfigError("Сетки частот отчетов не совпадают")

    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_ratio = report_a.column("sigma_hz") / report_b.column("sigma_hz")
        spread_ratio = report_a.column("spread_hz") / report_b.column("spread_hz")
    rows = [ComparisonRow(float(t), float(s), float(p)) for t, s, p in zip(ta, sigma_ratio, spread_ratio)]

    def finite_mean(values):
        finite = values[np.isfinite(values)]
        return float(finite.mean()) if finite.size else math.nan

    return ComparisonTable(rows=rows, mean_sigma_ratio=finite_mean(sigma_ratio),
                           mean_spread_ratio=finite_mean(spread_ratio))
