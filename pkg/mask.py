# mask.py
# Маска качества данных в реальном времени: 0 - хороший сигнал, 1 - выход из полосы 2 sigma, 2 - split mode

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, ContrastUndefinedError, PreconditionError
from rng_utils import STREAM_SCENARIO, make_rng
from signal_gen import DEFAULT_SAMPLE_RATE_HZ, DatasetRecord, SignalWindow, time_grid
from single_tone import FreqEstimate

logger = logging.getLogger(__name__)

MIN_REF_SIGMA_HZ = 1e-6


class MaskLabel(enum.IntEnum):
    GOOD = 0
    ANOMALY = 1
    SPLIT_MODE = 2


@dataclass
class MaskConfig:
    """
    Параметры маски.

    Если ref_mean_hz / ref_sigma_hz не заданы, опорная полоса оценивается по
    первым calibration_frames кадрам с хорошим контрастом.
    """
    ref_mean_hz: Optional[float] = None
    ref_sigma_hz: Optional[float] = None
    k_sigma: float = 2.0
    contrast_threshold: float = 0.5
    envelope_window: int = 50
    calibration_frames: int = 1000
    latency_budget_s: float = 0.010

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Нарушены инварианты
        """
        if (self.ref_mean_hz is None) != (self.ref_sigma_hz is None):
            raise ConfigError("ref_mean_hz и ref_sigma_hz задаются вместе")
        if self.ref_sigma_hz is not None and not self.ref_sigma_hz > 0:
            raise ConfigError(f"ref_sigma_hz должен быть > 0, получено {self.ref_sigma_hz}")
        if not self.k_sigma > 0:
            raise ConfigError(f"k_sigma должен быть > 0, получено {self.k_sigma}")
        if not 0 < self.contrast_threshold < 1:
            raise ConfigError(f"contrast_threshold должен лежать в (0, 1), получено {self.contrast_threshold}")
        if self.envelope_window < 2:
            raise ConfigError("envelope_window должен быть >= 2")
        if self.calibration_frames < 2:
            raise ConfigError("calibration_frames должен быть >= 2")

    @property
    def has_reference(self) -> bool:
        return self.ref_mean_hz is not None


def contrast_of(samples: np.ndarray) -> float:
    """
    (I_max - I_min) / (I_max + I_min) по экстремумам отсчетов.

    Raises:
        ContrastUndefinedError: I_max + I_min <= 0
    """
    i_max = float(np.max(samples))
    i_min = float(np.min(samples))
    total = i_max + i_min
    if total <= 0:
        raise ContrastUndefinedError(f"Контраст не определен: I_max + I_min = {total}")
    return (i_max - i_min) / total


def fringe_contrast(window: SignalWindow) -> float:
    """
    Контраст интерференционных полос окна по экстремумам огибающей.

    Для неотрицательной интенсивности результат лежит в [0, 1].

    Args:
        window: Окно интенсивности (не меньше одного периода биений)

    Returns:
        Контраст

    Raises:
        ContrastUndefinedError: I_max + I_min <= 0
    """
    return contrast_of(window.samples)


def classify_frame(freq: FreqEstimate, contrast: float, cfg: MaskConfig) -> MaskLabel:
    """
    Метка кадра.

    SPLIT_MODE, если контраст ниже порога (приоритет: в split mode частота может
    случайно попадать в хорошую полосу); иначе ANOMALY, если
    |f - ref_mean| > k_sigma * ref_sigma; иначе GOOD.

    Raises:
        ConfigError: В конфиге нет опорной полосы
    """
    if contrast < cfg.contrast_threshold:
        return MaskLabel.SPLIT_MODE
    if not cfg.has_reference:
        raise ConfigError("Для классификации нужна опорная полоса (ref_mean_hz, ref_sigma_hz)")
    if abs(freq.frequency_hz - cfg.ref_mean_hz) > cfg.k_sigma * cfg.ref_sigma_hz:
        return MaskLabel.ANOMALY
    return MaskLabel.GOOD


@dataclass
class MaskResult:
    frame_index: int
    label: MaskLabel
    freq_hz: float
    contrast: float
    latency_s: float = 0.0


FrameEstimator = Callable[[SignalWindow], FreqEstimate]


class MaskStream:
    """
    Потоковая маска для одного источника кадров.

    Метка кадра i зависит только от кадров <= i. Огибающая берется по последним
    envelope_window отсчетам (может захватывать предыдущие кадры).
    Без опорной полосы первые calibration_frames кадров размечаются только по
    контрасту (0 или 2) и служат для оценки (ref_mean, ref_sigma).
    """

    def __init__(self, estimator: FrameEstimator, cfg: MaskConfig):
        cfg.validate()
        self.estimator = estimator
        self.cfg = cfg
        self.frame_index = 0
        self.failures = 0
        self.over_budget = 0
        self._tail = np.empty(0, dtype=np.float64)
        self._frame_length: Optional[int] = None
        self._calibration: List[float] = []
        self.ref_mean_hz = cfg.ref_mean_hz
        self.ref_sigma_hz = cfg.ref_sigma_hz

    @property
    def calibrated(self) -> bool:
        return self.ref_mean_hz is not None

    def _envelope_contrast(self, samples: np.ndarray) -> float:
        history = np.concatenate([self._tail, samples])
        self._tail = history[-self.cfg.envelope_window:]
        try:
            return contrast_of(self._tail)
        except ContrastUndefinedError:
            # нет света на фотодиоде - биений нет, контраст считаем нулевым
            logger.debug("Кадр %d: контраст не определен, считаем 0", self.frame_index)
            return 0.0

    def _finish_calibration(self) -> None:
        values = np.asarray(self._calibration)
        self.ref_mean_hz = float(values.mean())
        self.ref_sigma_hz = max(float(values.std(ddof=1)), MIN_REF_SIGMA_HZ)
        logger.info("Опорная полоса по %d кадрам: %.4f +- %.4f Гц",
                    values.size, self.ref_mean_hz, self.ref_sigma_hz)

    def push(self, window: SignalWindow) -> MaskResult:
        """
        Обрабатывает очередной кадр.

        Низкий контраст дает SPLIT_MODE при любом исходе оценки. Иначе ошибка
        оценщика дает ANOMALY (консервативно). Ошибки учитываются в failures.

        Raises:
            PreconditionError: Длина кадра отличается от предыдущих
        """
        if self._frame_length is None:
            self._frame_length = window.n_samples
        elif window.n_samples != self._frame_length:
            raise PreconditionError(
                f"Кадры должны быть одной длины: {window.n_samples} != {self._frame_length}"
            )

        started = time.perf_counter()
        contrast = self._envelope_contrast(window.samples)
        try:
            estimate = self.estimator(window)
            freq_hz = float(estimate.frequency_hz)
            failed = not math.isfinite(freq_hz)
        except Exception as e:
            logger.debug("Кадр %d: ошибка оценщика: %s", self.frame_index, e)
            estimate, freq_hz, failed = None, math.nan, True

        if failed:
            self.failures += 1
        if contrast < self.cfg.contrast_threshold:
            label = MaskLabel.SPLIT_MODE
        elif failed:
            label = MaskLabel.ANOMALY
        elif not self.calibrated:
            label = MaskLabel.GOOD
            self._calibration.append(freq_hz)
            if len(self._calibration) >= self.cfg.calibration_frames:
                self._finish_calibration()
        else:
            band = MaskConfig(
                ref_mean_hz=self.ref_mean_hz,
                ref_sigma_hz=self.ref_sigma_hz,
                k_sigma=self.cfg.k_sigma,
                contrast_threshold=self.cfg.contrast_threshold,
            )
            label = classify_frame(estimate, contrast, band)

        latency = time.perf_counter() - started
        if latency > self.cfg.latency_budget_s:
            if self.over_budget == 0:
                logger.warning("Кадр %d обработан за %.2f мс, бюджет %.2f мс",
                               self.frame_index, latency * 1e3, self.cfg.latency_budget_s * 1e3)
            self.over_budget += 1

        result = MaskResult(self.frame_index, label, freq_hz, contrast, latency)
        self.frame_index += 1
        return result


def mask_stream(frames: Iterable[SignalWindow], estimator: FrameEstimator, cfg: MaskConfig) -> List[MaskLabel]:
    """
    Метки для последовательности кадров одной длины.

    Args:
        frames: Кадры
        estimator: Оценщик частоты кадра
        cfg: Параметры маски

    Returns:
        Список меток (по одной на кадр)
    """
    stream = MaskStream(estimator, cfg)
    labels = [stream.push(frame).label for frame in frames]
    if stream.failures:
        logger.warning("Маска: %d кадров с ошибкой оценщика", stream.failures)
    return labels


@dataclass
class Segment:
    """
    Участок синтетического сценария.

    kind: 'good' (опорная частота), 'shift' (сдвиг на shift_sigma опорных sigma,
    как при скачке моды), 'split' (случайная частота в [f_lo, f_hi], низкий контраст).
    """
    kind: str
    count: int
    shift_sigma: float = 10.0
    visibility: Optional[float] = None


@dataclass
class Scenario:
    frames: List[SignalWindow]
    labels: List[MaskLabel]
    frequencies_hz: List[float]
    clean: List[SignalWindow] = field(default_factory=list)

    def records(self) -> List[DatasetRecord]:
        """Кадры как записи датасета (clean - кадр без шума, частота - истинная)."""
        return [
            DatasetRecord(noisy=frame, clean=clean, frequency_hz=freq)
            for frame, clean, freq in zip(self.frames, self.clean, self.frequencies_hz)
        ]


def make_scenario(
    segments: Sequence[Segment],
    ref_mean_hz: float = 280.0,
    ref_sigma_hz: float = 1.0,
    n_samples: int = 50,
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
    intensity: float = 1.0,
    good_visibility: float = 0.8,
    split_visibility: float = 0.3,
    noise_sigma: float = 0.002,
    freq_jitter_hz: float = 0.0,
    split_band_hz: Tuple[float, float] = (100.0, 500.0),
    seed: int = 0,
) -> Scenario:
    """
    Строит кадры интенсивности I = I0 * (1 + V sin(2 pi f t + phi)) + шум с известной разметкой.

    Args:
        segments: Участки сценария
        ref_mean_hz, ref_sigma_hz: Опорная полоса
        n_samples, sample_rate_hz: Размер кадра
        intensity: I0
        good_visibility: Контраст хороших и сдвинутых кадров
        split_visibility: Контраст кадров split mode
        noise_sigma: Стандартное отклонение аддитивного шума
        freq_jitter_hz: Гауссов разброс частоты хороших кадров
        split_band_hz: Диапазон случайной частоты в split mode
        seed: Сид

    Returns:
        Scenario с ожидаемыми метками

    Raises:
        ConfigError: Неизвестный тип участка
    """
    rng = make_rng(seed, STREAM_SCENARIO)
    t = time_grid(n_samples, sample_rate_hz)
    scenario = Scenario(frames=[], labels=[], frequencies_hz=[], clean=[])

    for segment in segments:
        for _ in range(segment.count):
            if segment.kind == "good":
                freq = ref_mean_hz + (rng.normal(0.0, freq_jitter_hz) if freq_jitter_hz > 0 else 0.0)
                visibility, label = good_visibility, MaskLabel.GOOD
            elif segment.kind == "shift":
                freq = ref_mean_hz + segment.shift_sigma * ref_sigma_hz
                visibility, label = good_visibility, MaskLabel.ANOMALY
            elif segment.kind == "split":
                freq = float(rng.uniform(*split_band_hz))
                visibility, label = split_visibility, MaskLabel.SPLIT_MODE
            else:
                raise ConfigError(f"Неизвестный тип участка '{segment.kind}'")
            if segment.visibility is not None:
                visibility = segment.visibility

            phase = rng.uniform(-math.pi, math.pi)
            clean = intensity * (1.0 + visibility * np.sin(2.0 * np.pi * freq * t + phase))
            noisy = clean + rng.normal(0.0, noise_sigma, size=n_samples) if noise_sigma > 0 else clean
            scenario.frames.append(SignalWindow(noisy, sample_rate_hz))
            scenario.clean.append(SignalWindow(clean, sample_rate_hz))
            scenario.labels.append(label)
            scenario.frequencies_hz.append(float(freq))
    return scenario
