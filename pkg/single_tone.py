# single_tone.py
# Базовый оценщик частоты Single Tone: окно Ханна, БПФ, поиск пика, межбиновая интерполяция

import enum
import logging
import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.signal import windows

from errors import EdgeBinWarning, NoToneError, PreconditionError
from signal_gen import SignalWindow

logger = logging.getLogger(__name__)

MIN_WINDOW_LENGTH = 8
# DC считается пиком, только если он во столько раз больше лучшего бина выше DC
DC_DOMINANCE = 2.0


class Method(str, enum.Enum):
    """Метод оценки частоты."""
    SINGLE_TONE = "st"
    NEURAL_NET = "nn"

    @classmethod
    def parse(cls, value: str) -> "Method":
        try:
            return cls(str(value).lower())
        except ValueError:
            raise PreconditionError(f"Неизвестный метод '{value}', допустимы: st, nn")


@dataclass(frozen=True)
class FreqEstimate:
    """Результат оценки: частота, амплитуда (с поправкой на окно) и метод."""
    frequency_hz: float
    amplitude: float
    method: Method


@dataclass
class BatchEstimate:
    """Оценки ST для пачки окон."""
    frequency_hz: np.ndarray
    amplitude: np.ndarray
    valid: np.ndarray
    edge: np.ndarray


def _hann(n_samples: int) -> np.ndarray:
    # периодическое окно: тон ровно на бине протекает только в соседние бины
    return windows.hann(n_samples, sym=False)


def single_tone_batch(samples: np.ndarray, sample_rate_hz: float, pad_factor: int = 1) -> BatchEstimate:
    """
    Векторная оценка доминирующего тона для пачки окон формы (B, n).

    Шаги: вычитание среднего, окно Ханна, rfft (с дополнением нулями до
    pad_factor * n), пиковый бин k* (поиск с бина 1; DC
    выбирается, только если превосходит его в DC_DOMINANCE раз), энергетически взвешенный центроид по
    бинам {k*-1, k*, k*+1}. Если соседний бин - DC или Найквист, смещение
    берется по отношению амплитуд с другим соседом. Пик на DC или Найквисте
    не интерполируется и помечается в edge. Окна без тона помечаются valid=False.

    Args:
        samples: Массив (B, n) или (n,)
        sample_rate_hz: Частота дискретизации
        pad_factor: Коэффициент дополнения нулями (>= 1)

    Returns:
        BatchEstimate

    Raises:
        PreconditionError: n < 8 или pad_factor < 1
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = x.shape[1]
    if n < MIN_WINDOW_LENGTH:
        raise PreconditionError(f"Длина окна должна быть >= {MIN_WINDOW_LENGTH}, получено {n}")
    if pad_factor < 1:
        raise PreconditionError(f"pad_factor должен быть >= 1, получено {pad_factor}")

    nfft = n * int(pad_factor)
    window = _hann(n)
    centered = x - x.mean(axis=1, keepdims=True)
    spectrum = np.abs(np.fft.rfft(centered * window, n=nfft, axis=1))
    power = spectrum ** 2
    n_bins = spectrum.shape[1]
    rows = np.arange(x.shape[0])

    # остаток среднего под окном Ханна попадает в DC и может сравняться с тоном на бине 1
    peak = 1 + np.argmax(spectrum[:, 1:], axis=1)
    peak = np.where(spectrum[:, 0] > DC_DOMINANCE * spectrum[rows, peak], 0, peak)
    valid = (np.ptp(x, axis=1) > 0) & (spectrum[rows, peak] > 0)
    edge = (peak == 0) | (peak == n_bins - 1)

    lo = np.clip(peak - 1, 0, n_bins - 1)
    hi = np.clip(peak + 1, 0, n_bins - 1)
    e_lo, e_mid, e_hi = power[rows, lo], power[rows, peak], power[rows, hi]
    total = e_lo + e_mid + e_hi
    with np.errstate(invalid="ignore", divide="ignore"):
        centroid = (lo * e_lo + peak * e_mid + hi * e_hi) / total

    # Бин DC содержит зеркальную компоненту и остаток вычитания среднего, поэтому
    # рядом с краями смещение берется по одному соседу из формы главного лепестка
    # Ханна: |X[k+1]| / |X[k]| = (1 + d) / (2 - d).
    if pad_factor == 1 and n_bins > 3:
        near_dc = (peak == 1) & valid
        near_nyq = (peak == n_bins - 2) & valid & ~near_dc
        with np.errstate(invalid="ignore", divide="ignore"):
            r_up = spectrum[rows, hi] / spectrum[rows, peak]
            r_down = spectrum[rows, lo] / spectrum[rows, peak]
        centroid = np.where(near_dc, peak + (2.0 * r_up - 1.0) / (1.0 + r_up), centroid)
        centroid = np.where(near_nyq, peak - (2.0 * r_down - 1.0) / (1.0 + r_down), centroid)

    bin_pos = np.where(edge | ~valid, peak.astype(np.float64), centroid)

    bin_width = sample_rate_hz / nfft
    frequency = bin_pos * bin_width
    amplitude = 2.0 * spectrum[rows, peak] / window.sum()
    return BatchEstimate(frequency_hz=frequency, amplitude=amplitude, valid=valid, edge=edge & valid)


def single_tone_estimate(window: SignalWindow, pad_factor: int = 1) -> FreqEstimate:
    """
    Оценка частоты доминирующего тона в одном окне.

    Args:
        window: Окно сигнала (длина >= 8)
        pad_factor: Коэффициент дополнения нулями (по умолчанию без дополнения)

    Returns:
        FreqEstimate с методом Method.SINGLE_TONE

    Raises:
        NoToneError: Все отсчеты одинаковы
        PreconditionError: Окно короче 8 отсчетов

    Warns:
        EdgeBinWarning: Пик на DC или Найквисте, оценка без интерполяции
    """
    result = single_tone_batch(window.samples[np.newaxis, :], window.sample_rate_hz, pad_factor)
    if not result.valid[0]:
        raise NoToneError("В окне нет тона: сигнал постоянный")
    if result.edge[0]:
        warnings.warn(
            f"Пик спектра на краевом бине ({result.frequency_hz[0]:.3f} Гц), интерполяция не выполнена",
            EdgeBinWarning,
            stacklevel=2,
        )
    return FreqEstimate(
        frequency_hz=float(result.frequency_hz[0]),
        amplitude=float(result.amplitude[0]),
        method=Method.SINGLE_TONE,
    )


def frequency_resolution(n_samples: int, sample_rate_hz: float, pad_factor: int = 1) -> Tuple[float, float]:
    """Ширина бина и длительность окна: (fs / (pad * n), n / fs)."""
    return sample_rate_hz / (n_samples * pad_factor), n_samples / sample_rate_hz
