# estimators.py
# Общий выбор оценщика частоты (ST или сеть) для свипов, маски, CLI и HTTP-сервиса

import logging
import math
from typing import Callable, Optional, Tuple

import numpy as np

from errors import EstimatorError, PreconditionError
from nn_core import Model, denormalize_frequency, forward_batch
from signal_gen import SignalWindow
from single_tone import FreqEstimate, Method, single_tone_batch, single_tone_estimate

logger = logging.getLogger(__name__)

Estimator = Callable[[SignalWindow], FreqEstimate]


def check_model_rate(model: Model, sample_rate_hz: float) -> None:
    """
    Проверяет, что окно снято с той же частотой дискретизации, что и обучающие данные.

    Raises:
        PreconditionError: Частоты дискретизации различаются
    """
    trained_rate = model.hyperparams.get("sample_rate_hz")
    if trained_rate is not None and not math.isclose(float(trained_rate), sample_rate_hz, rel_tol=1e-6):
        raise PreconditionError(
            f"Модель обучена на {trained_rate} Гц, а окно дискретизовано на {sample_rate_hz} Гц"
        )


def nn_estimate(model: Model, window: SignalWindow) -> FreqEstimate:
    """
    Оценка частоты сетью (денормализация выхода в Гц).

    Амплитуда оценивается как sqrt(2) * std окна.

    Args:
        model: Обученная модель
        window: Окно длины model.input_length

    Returns:
        FreqEstimate с методом Method.NEURAL_NET
    """
    check_model_rate(model, window.sample_rate_hz)
    _, freq_norm, _ = forward_batch(model, window.samples[np.newaxis, :])
    return FreqEstimate(
        frequency_hz=float(denormalize_frequency(freq_norm[0])),
        amplitude=float(math.sqrt(2.0) * np.std(window.samples)),
        method=Method.NEURAL_NET,
    )


def make_estimator(method, model: Optional[Model] = None) -> Estimator:
    """
    Возвращает функцию окно -> FreqEstimate для выбранного метода.

    Args:
        method: Method или строка 'st' / 'nn'
        model: Модель (обязательна для 'nn')

    Returns:
        Оценщик

    Raises:
        EstimatorError: Для сети не передана модель
    """
    method = Method.parse(method) if not isinstance(method, Method) else method
    if method is Method.SINGLE_TONE:
        return single_tone_estimate
    if model is None:
        raise EstimatorError("Для метода nn нужна модель (--model)")
    return lambda window: nn_estimate(model, window)


def estimate_batch(
    method,
    samples: np.ndarray,
    sample_rate_hz: float,
    model: Optional[Model] = None,
    pad_factor: int = 1,
    chunk_size: int = 4096,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Векторная оценка частот для пачки окон (B, n).

    Args:
        method: 'st' или 'nn'
        samples: Окна
        sample_rate_hz: Частота дискретизации
        model: Модель (для 'nn')
        pad_factor: Дополнение нулями для ST
        chunk_size: Размер порции для прохода сети

    Returns:
        Кортеж (frequency_hz (B,), valid (B,)); невалидные оценки считаются отброшенными

    Raises:
        EstimatorError: Для сети не передана модель
    """
    method = Method.parse(method) if not isinstance(method, Method) else method
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))

    if method is Method.SINGLE_TONE:
        result = single_tone_batch(x, sample_rate_hz, pad_factor)
        edges = int(result.edge.sum())
        if edges:
            logger.warning("ST: %d окон с пиком на краевом бине, оценка без интерполяции", edges)
        return result.frequency_hz, result.valid

    if model is None:
        raise EstimatorError("Для метода nn нужна модель (--model)")
    check_model_rate(model, sample_rate_hz)
    freqs = np.empty(x.shape[0], dtype=np.float64)
    for start in range(0, x.shape[0], chunk_size):
        _, freq_norm, _ = forward_batch(model, x[start:start + chunk_size])
        freqs[start:start + chunk_size] = denormalize_frequency(freq_norm)
    return freqs, np.isfinite(freqs)
