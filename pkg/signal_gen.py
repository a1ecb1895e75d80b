# signal_gen.py
# Синтез пар чистый/зашумленный синусоид (биения кольцевого лазера) и генерация датасетов

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal as sp_signal

from errors import DomainError, EmptyDatasetError, PreconditionError, RangeError
from rng_utils import STREAM_NOISE, STREAM_PARAMS, STREAM_RECORDS, check_seed, make_rng, split_seed

logger = logging.getLogger(__name__)

# Константы
DEFAULT_N_SAMPLES = 50
DEFAULT_SAMPLE_RATE_HZ = 5000.0
CALIBRATED_SIGMA_AMP = 0.006  # лучшее совпадение ASD с данными GINGERINO
GINGERINO_FREQUENCY_HZ = 280.0
GP2_FREQUENCY_HZ = 184.0

Interval = Tuple[float, float]

# Рабочая область генератора для sample_params и generate_dataset
PARAM_BOUNDS = {
    "frequency_hz": (100.0, 500.0),
    "offset": (-0.2, 0.2),
    "trend_start": (0.6, 1.2),
    "trend_end": (0.6, 1.2),
    "sigma_amp": (0.001, 0.01),
    "sigma_phase": (0.001, 0.01),
}


@dataclass(frozen=True)
class ParamRanges:
    """
    Интервалы равномерного распределения для каждого случайного параметра.

    Значения по умолчанию соответствуют рабочему диапазону сети:
    f из [100, 500] Гц, offset из [-0.2, 0.2], фаза из [-pi, pi],
    trend_start/trend_end из [0.6, 1.2], оба sigma из [0.001, 0.01].
    """
    frequency_hz: Interval = (100.0, 500.0)
    phase_rad: Interval = (-math.pi, math.pi)
    offset: Interval = (-0.2, 0.2)
    trend_start: Interval = (0.6, 1.2)
    trend_end: Interval = (0.6, 1.2)
    sigma_amp: Interval = (0.001, 0.01)
    sigma_phase: Interval = (0.001, 0.01)
    n_samples: int = DEFAULT_N_SAMPLES
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    @classmethod
    def calibrated(cls, **overrides) -> "ParamRanges":
        """Пресет с фиксированным sigma_amp = 0.006 (калибровка по спектру шума)."""
        base = cls(sigma_amp=(CALIBRATED_SIGMA_AMP, CALIBRATED_SIGMA_AMP))
        return replace(base, **overrides)

    @classmethod
    def noiseless(cls, **overrides) -> "ParamRanges":
        """Пресет без шума, тренда, смещения и фазы."""
        base = cls(
            phase_rad=(0.0, 0.0),
            offset=(0.0, 0.0),
            trend_start=(1.0, 1.0),
            trend_end=(1.0, 1.0),
            sigma_amp=(0.0, 0.0),
            sigma_phase=(0.0, 0.0),
        )
        return replace(base, **overrides)

    def with_frequency(self, frequency_hz: float) -> "ParamRanges":
        """Копия с вырожденным интервалом частоты [f, f]."""
        return replace(self, frequency_hz=(float(frequency_hz), float(frequency_hz)))

    def intervals(self) -> List[Tuple[str, Interval]]:
        return [
            ("frequency_hz", self.frequency_hz),
            ("phase_rad", self.phase_rad),
            ("offset", self.offset),
            ("trend_start", self.trend_start),
            ("trend_end", self.trend_end),
            ("sigma_amp", self.sigma_amp),
            ("sigma_phase", self.sigma_phase),
        ]

    def validate(self) -> None:
        """
        Проверяет интервалы.

        Raises:
            RangeError: lo > hi, нечисловые границы или выход за физические пределы
        """
        for name, (lo, hi) in self.intervals():
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise RangeError(f"Интервал {name} содержит нечисловые границы: ({lo}, {hi})")
            if lo > hi:
                raise RangeError(f"Пустой интервал {name}: lo={lo} > hi={hi}")

        if self.frequency_hz[0] <= 0:
            raise RangeError(f"Частота должна быть положительной: {self.frequency_hz}")
        if self.phase_rad[0] < -math.pi or self.phase_rad[1] > math.pi:
            raise RangeError(f"Фаза должна лежать в [-pi, pi]: {self.phase_rad}")
        if self.sigma_amp[0] < 0 or self.sigma_phase[0] < 0:
            raise RangeError("Стандартные отклонения шума не могут быть отрицательными")
        if self.trend_start[0] <= 0 or self.trend_end[0] <= 0:
            raise RangeError("Амплитудный тренд должен быть положительным")
        if self.n_samples < 2:
            raise RangeError(f"n_samples должен быть >= 2, получено {self.n_samples}")
        if self.sample_rate_hz <= 2 * self.frequency_hz[1]:
            raise RangeError(
                f"Частота дискретизации {self.sample_rate_hz} Гц не удовлетворяет "
                f"критерию Найквиста для f <= {self.frequency_hz[1]} Гц"
            )

    def check_bounds(self) -> None:
        """
        Проверяет, что интервалы лежат в рабочей области генератора.

        f в [100, 500] Гц, offset в [-0.2, 0.2], тренд в [0.6, 1.2], sigma в
        [0.001, 0.01]. Нулевой интервал шума (0, 0) допускается: шум выключен.

        Raises:
            RangeError: Интервал выходит за рабочую область
        """
        self.validate()
        for name, (lo, hi) in self.intervals():
            bounds = PARAM_BOUNDS.get(name)
            if bounds is None:
                continue
            if name.startswith("sigma_") and lo == hi == 0.0:
                continue
            if lo < bounds[0] or hi > bounds[1]:
                raise RangeError(f"Интервал {name}=({lo}, {hi}) выходит за пределы [{bounds[0]}, {bounds[1]}]")


@dataclass(frozen=True)
class GenParams:
    """Полный вектор параметров одного синтетического примера."""
    frequency_hz: float
    phase_rad: float = 0.0
    offset: float = 0.0
    trend_start: float = 1.0
    trend_end: float = 1.0
    sigma_amp: float = 0.0
    sigma_phase: float = 0.0
    n_samples: int = DEFAULT_N_SAMPLES
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    seed: int = 0

    def validate(self) -> None:
        """
        Raises:
            PreconditionError: n_samples < 2 или нарушение критерия Найквиста
        """
        if self.n_samples < 2:
            raise PreconditionError(f"n_samples должен быть >= 2, получено {self.n_samples}")
        if self.sample_rate_hz <= 2 * self.frequency_hz:
            raise PreconditionError(
                f"Нарушен критерий Найквиста: fs={self.sample_rate_hz} Гц, f={self.frequency_hz} Гц"
            )
        if self.sigma_amp < 0 or self.sigma_phase < 0:
            raise PreconditionError("Стандартные отклонения шума не могут быть отрицательными")
        check_seed(self.seed)


@dataclass(frozen=True)
class SignalWindow:
    """Окно отсчетов интерферограммы фиксированной длины с частотой дискретизации."""
    samples: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        data = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(data)):
            raise PreconditionError("Окно содержит нечисловые значения")
        if self.sample_rate_hz <= 0:
            raise PreconditionError(f"Частота дискретизации должна быть > 0: {self.sample_rate_hz}")
        data.flags.writeable = False
        object.__setattr__(self, "samples", data)

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def __len__(self) -> int:
        return self.n_samples


@dataclass(frozen=True)
class DatasetRecord:
    """Обучающая тройка: зашумленное окно, чистое окно, истинная частота."""
    noisy: SignalWindow
    clean: SignalWindow
    frequency_hz: float

    def __post_init__(self):
        if self.noisy.n_samples != self.clean.n_samples:
            raise PreconditionError(
                f"Длины окон не совпадают: {self.noisy.n_samples} != {self.clean.n_samples}"
            )


def sample_params(rng_seed: int, ranges: Optional[ParamRanges] = None) -> GenParams:
    """
    Разыгрывает параметры примера равномерно из интервалов.

    Порядок розыгрыша фиксирован: f, phi, offset, trend_start, trend_end,
    sigma_amp, sigma_phase. Сам rng_seed сохраняется в GenParams.seed и
    используется generate_pair для шума (в отдельном потоке).

    Args:
        rng_seed: 64-битный сид
        ranges: Интервалы (по умолчанию ParamRanges())

    Returns:
        GenParams

    Raises:
        RangeError: Некорректные интервалы или выход за рабочую область
    """
    ranges = ranges or ParamRanges()
    ranges.check_bounds()
    rng = make_rng(rng_seed, STREAM_PARAMS)

    drawn = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in ranges.intervals()}
    return GenParams(
        n_samples=ranges.n_samples,
        sample_rate_hz=ranges.sample_rate_hz,
        seed=check_seed(rng_seed),
        **drawn,
    )


def time_grid(n_samples: int, sample_rate_hz: float) -> np.ndarray:
    """Сетка времени t_i = i / fs, t_0 = 0."""
    return np.arange(n_samples, dtype=np.float64) / sample_rate_hz


def synthesize_batch(
    frequency_hz: np.ndarray,
    phase_rad: np.ndarray,
    offset: np.ndarray,
    trend_start: np.ndarray,
    trend_end: np.ndarray,
    sigma_amp: np.ndarray,
    sigma_phase: np.ndarray,
    n_samples: int,
    sample_rate_hz: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Строит пачку пар (noisy, clean) по строкам параметров.

    clean[i] = sin(2 pi f t_i)
    noisy[i] = A(t_i) * sin(2 pi f t_i + phi + eta_phi_i) + offset + eta_G_i,
    A - линейная интерполяция от trend_start до trend_end по n_samples точкам.
    Шум фазы и амплитуды независим для каждого отсчета. Смещение трендом не
    умножается.

    Args:
        frequency_hz..sigma_phase: Массивы формы (B,)
        n_samples: Длина окна
        sample_rate_hz: Частота дискретизации
        rng: Генератор для шума (сначала фаза, затем амплитуда)

    Returns:
        Кортеж (noisy, clean), оба формы (B, n_samples), float64
    """
    f = np.asarray(frequency_hz, dtype=np.float64).reshape(-1, 1)
    batch = f.shape[0]
    t = time_grid(n_samples, sample_rate_hz)[np.newaxis, :]

    omega_t = 2.0 * np.pi * f * t
    clean = np.sin(omega_t)

    # linspace(trend_start, trend_end, n) для каждой строки
    start = np.asarray(trend_start, dtype=np.float64).reshape(-1, 1)
    end = np.asarray(trend_end, dtype=np.float64).reshape(-1, 1)
    frac = np.linspace(0.0, 1.0, n_samples)[np.newaxis, :]
    amplitude = start + (end - start) * frac
    amplitude[:, -1:] = end

    eta_phi = rng.standard_normal((batch, n_samples)) * np.asarray(sigma_phase, dtype=np.float64).reshape(-1, 1)
    eta_g = rng.standard_normal((batch, n_samples)) * np.asarray(sigma_amp, dtype=np.float64).reshape(-1, 1)

    phase = np.asarray(phase_rad, dtype=np.float64).reshape(-1, 1)
    noisy = amplitude * np.sin(omega_t + phase + eta_phi) + np.asarray(offset, dtype=np.float64).reshape(-1, 1) + eta_g
    return noisy, clean


def generate_pair(params: GenParams) -> DatasetRecord:
    """
    Генерирует пару чистый/зашумленный сигнал для заданных параметров.

    Полностью детерминирована по params.seed.

    Args:
        params: Параметры примера

    Returns:
        DatasetRecord

    Raises:
        PreconditionError: Нарушение критерия Найквиста или n_samples < 2
    """
    params.validate()
    rng = make_rng(params.seed, STREAM_NOISE)
    noisy, clean = synthesize_batch(
        np.array([params.frequency_hz]),
        np.array([params.phase_rad]),
        np.array([params.offset]),
        np.array([params.trend_start]),
        np.array([params.trend_end]),
        np.array([params.sigma_amp]),
        np.array([params.sigma_phase]),
        params.n_samples,
        params.sample_rate_hz,
        rng,
    )
    return DatasetRecord(
        noisy=SignalWindow(noisy[0], params.sample_rate_hz),
        clean=SignalWindow(clean[0], params.sample_rate_hz),
        frequency_hz=params.frequency_hz,
    )


def record_seed(master_seed: int, index: int) -> int:
    """Сид записи с номером index: split_seed(master_seed, index, STREAM_RECORDS)."""
    return split_seed(master_seed, index, STREAM_RECORDS)


def generate_dataset(
    n: int,
    ranges: Optional[ParamRanges] = None,
    master_seed: int = 0,
    start: int = 0,
) -> Iterator[DatasetRecord]:
    """
    Поток из n независимых записей.

    Запись с глобальным номером i получает сид record_seed(master_seed, i),
    поэтому любую часть датасета можно воспроизвести отдельно (start > 0).

    Args:
        n: Количество записей
        ranges: Интервалы параметров
        master_seed: Главный сид
        start: Номер первой записи

    Returns:
        Итератор DatasetRecord

    Raises:
        EmptyDatasetError: n < 1
        RangeError: Некорректные интервалы или выход за рабочую область
    """
    if n < 1:
        raise EmptyDatasetError(f"Размер датасета должен быть >= 1, получено {n}")
    ranges = ranges or ParamRanges()
    ranges.check_bounds()
    check_seed(master_seed)
    return _iter_records(n, ranges, master_seed, start)


def _iter_records(n: int, ranges: ParamRanges, master_seed: int, start: int) -> Iterator[DatasetRecord]:
    for index in range(start, start + n):
        yield generate_pair(sample_params(record_seed(master_seed, index), ranges))


def records_to_arrays(records: Sequence[DatasetRecord]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Складывает записи в массивы (noisy (N, n), clean (N, n), frequency (N,))."""
    noisy = np.stack([r.noisy.samples for r in records])
    clean = np.stack([r.clean.samples for r in records])
    freqs = np.array([r.frequency_hz for r in records], dtype=np.float64)
    return noisy, clean, freqs


def colatitude_rad(latitude_deg: float) -> float:
    """Коширота (90 - широта) в радианах: угол проекции для горизонтального кольца."""
    return math.radians(90.0 - latitude_deg)


def sagnac_frequency(omega: float, area: float, perimeter: float, wavelength: float, theta: float) -> float:
    """
    Частота Саньяка: f = 4 * Omega * A * cos(theta) / (P * lambda).

    Пример: квадратный резонатор 3.6 м (A = 12.96 м^2, P = 14.4 м), He-Ne 632.8 нм,
    вращение Земли, theta = 0 -> около 414.9 Гц; на кошироте Гран-Сассо (47.6 град)
    около 280 Гц.

    Args:
        omega: Скорость вращения, рад/с
        area: Площадь резонатора, м^2
        perimeter: Периметр, м
        wavelength: Длина волны, м
        theta: Угол между нормалью и осью вращения, рад, [0, pi]

    Returns:
        Частота биений, Гц

    Raises:
        DomainError: Неположительная геометрия или theta вне [0, pi]
    """
    for name, value in (("omega", omega), ("area", area), ("perimeter", perimeter), ("wavelength", wavelength)):
        if not (value > 0 and math.isfinite(value)):
            raise DomainError(f"{name} должен быть положительным, получено {value}")
    if not (0.0 <= theta <= math.pi):
        raise DomainError(f"theta должен лежать в [0, pi], получено {theta}")
    return 4.0 * omega * area * math.cos(theta) / (perimeter * wavelength)


def white_noise_asd_level(sigma: float, sample_rate_hz: float) -> float:
    """Односторонняя ASD белого гауссова шума: sigma * sqrt(2 / fs)."""
    return sigma * math.sqrt(2.0 / sample_rate_hz)


def noise_asd(params_list: Sequence[GenParams], nperseg: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Средняя амплитудная спектральная плотность шума синтетических окон.

    Остаток noisy - A(t) sin(2 pi f t + phi) - offset содержит шум амплитуды и
    проекцию шума фазы; его PSD по Уэлчу усредняется по окнам, ASD = sqrt(PSD).

    Args:
        params_list: Параметры окон (одинаковые n_samples и sample_rate_hz)
        nperseg: Длина сегмента Уэлча (по умолчанию вся длина окна)

    Returns:
        Кортеж (frequencies_hz, asd)

    Raises:
        EmptyDatasetError: Пустой список параметров
        PreconditionError: Разные n_samples или sample_rate_hz
    """
    if not params_list:
        raise EmptyDatasetError("Нужен хотя бы один набор параметров")
    n = params_list[0].n_samples
    fs = params_list[0].sample_rate_hz
    if any(p.n_samples != n or p.sample_rate_hz != fs for p in params_list):
        raise PreconditionError("Все окна должны иметь одинаковые n_samples и sample_rate_hz")

    t = time_grid(n, fs)
    residuals = []
    for params in params_list:
        record = generate_pair(params)
        amplitude = np.linspace(params.trend_start, params.trend_end, n)
        deterministic = amplitude * np.sin(2.0 * np.pi * params.frequency_hz * t + params.phase_rad) + params.offset
        residuals.append(record.noisy.samples - deterministic)

    freqs, psd = sp_signal.welch(np.stack(residuals), fs=fs, nperseg=nperseg or n, axis=-1)
    return freqs, np.sqrt(psd.mean(axis=0))
