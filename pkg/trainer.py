# trainer.py
# Обучение сети на синтетических данных: поток батчей, валидация, ранняя остановка, чекпоинты

import csv
import logging
import math
import os
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from config import apply_overrides, load_kv_config
from errors import ConfigError, TrainingDivergenceError
from model_io import save_model
from nn_core import (
    AdamState,
    LossWeights,
    Model,
    backward,
    build_model,
    forward_batch,
    loss_with_grads,
    normalize_frequency,
    optimizer_step,
)
from rng_utils import check_seed
from signal_gen import ParamRanges, generate_dataset, records_to_arrays

logger = logging.getLogger(__name__)

NOISE_PRESETS = ("default", "calibrated", "noiseless")


def ranges_for_preset(noise: str, **overrides) -> ParamRanges:
    """
    Интервалы генератора по имени пресета шума.

    Raises:
        ConfigError: Неизвестный пресет
    """
    if noise == "default":
        return replace(ParamRanges(), **overrides)
    if noise == "calibrated":
        return ParamRanges.calibrated(**overrides)
    if noise == "noiseless":
        return ParamRanges.noiseless(**overrides)
    raise ConfigError(f"Неизвестный пресет шума '{noise}', допустимы: {', '.join(NOISE_PRESETS)}")


@dataclass
class TrainConfig:
    """
    Параметры обучения.

    200 000 / 20 000 окон: обучение на CPU ноутбука около часа.
    Точности ST на 250-310 Гц такой бюджет не дает (sigma сети около 8 Гц),
    см. tests/test_acceptance.py.
    """
    n_train: int = 200_000
    n_val: int = 20_000
    batch_size: int = 256
    max_epochs: int = 30
    lr: float = 1e-3
    patience: int = 5
    master_seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    ranges: ParamRanges = field(default_factory=ParamRanges)
    min_delta: float = 0.0
    kernel_size: int = 5
    channels: str = "16,32,32"
    head_channels: int = 16
    dense_units: int = 64
    prefetch: int = 4
    checkpoint_path: Optional[str] = None
    show_progress: bool = True

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Нарушены инварианты конфигурации
        """
        if self.n_train < 1 or self.n_val < 1 or self.batch_size < 1:
            raise ConfigError("n_train, n_val и batch_size должны быть >= 1")
        if self.patience < 1:
            raise ConfigError("patience должен быть >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs должен быть >= 1")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError(f"lr должен быть > 0, получено {self.lr}")
        if self.min_delta < 0:
            raise ConfigError("min_delta не может быть отрицательным")
        if self.prefetch < 1:
            raise ConfigError("prefetch должен быть >= 1")
        check_seed(self.master_seed)
        self.channel_list()
        self.ranges.validate()

    def channel_list(self) -> Tuple[int, ...]:
        try:
            channels = tuple(int(c) for c in self.channels.split(",") if c.strip())
        except ValueError:
            raise ConfigError(f"Некорректный список каналов: {self.channels!r}")
        if len(channels) != 3 or min(channels) < 1:
            raise ConfigError(f"Нужно ровно три положительных числа каналов, получено {self.channels!r}")
        return channels

    @classmethod
    def from_values(cls, values: Dict[str, str], base: Optional["TrainConfig"] = None) -> "TrainConfig":
        """
        Строит конфиг из плоского словаря key=value.

        Кроме полей dataclass понимает ключи w_clean, w_freq (веса функции потерь),
        noise (default/calibrated/noiseless), f_min, f_max, sample_rate_hz, n_samples.
        """
        values = dict(values)
        config = base or cls()

        weights = config.loss_weights
        if "w_clean" in values or "w_freq" in values:
            weights = LossWeights(
                w_clean=float(values.pop("w_clean", weights.w_clean)),
                w_freq=float(values.pop("w_freq", weights.w_freq)),
            )

        range_overrides = {}
        if "f_min" in values or "f_max" in values:
            lo, hi = config.ranges.frequency_hz
            range_overrides["frequency_hz"] = (float(values.pop("f_min", lo)), float(values.pop("f_max", hi)))
        if "sample_rate_hz" in values:
            range_overrides["sample_rate_hz"] = float(values.pop("sample_rate_hz"))
        if "n_samples" in values:
            range_overrides["n_samples"] = int(values.pop("n_samples"))
        noise = values.pop("noise", None)
        ranges = ranges_for_preset(noise, **range_overrides) if noise else replace(config.ranges, **range_overrides)

        config = apply_overrides(config, values)
        return replace(config, loss_weights=weights, ranges=ranges)

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        return cls.from_values(load_kv_config(path))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainHistory:
    """История обучения: потери по эпохам, лучшая эпоха, время."""
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def best_val_loss(self) -> float:
        for record in self.epochs:
            if record.epoch == self.best_epoch:
                return record.val_loss
        return math.inf

    def write_csv(self, path: str) -> None:
        """Пишет CSV с заголовком epoch,train_loss,val_loss,seconds."""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for record in self.epochs:
                writer.writerow([record.epoch, repr(record.train_loss), repr(record.val_loss), f"{record.seconds:.3f}"])


Batch = Tuple[np.ndarray, np.ndarray, np.ndarray]


def _make_batches(config: TrainConfig, start: int, count: int) -> Iterator[Batch]:
    """Батчи записей [start, start + count) в фиксированном порядке."""
    records = generate_dataset(count, config.ranges, config.master_seed, start=start)
    pending = []
    for record in records:
        pending.append(record)
        if len(pending) == config.batch_size:
            yield _to_batch(pending)
            pending = []
    if pending:
        yield _to_batch(pending)


def _to_batch(records) -> Batch:
    noisy, clean, freqs = records_to_arrays(records)
    return noisy, clean, normalize_frequency(freqs)


class BatchPrefetcher:
    """
    Собирает батчи в фоновом потоке в ограниченную очередь.

    Производитель один, поэтому порядок батчей детерминирован.
    """

    _DONE = object()

    def __init__(self, batches: Iterator[Batch], maxsize: int):
        self._queue: "queue.Queue" = queue.Queue(maxsize=maxsize)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, args=(batches,), daemon=True)
        self._thread.start()

    def _produce(self, batches: Iterator[Batch]) -> None:
        try:
            for batch in batches:
                while not self._stop.is_set():
                    try:
                        self._queue.put(batch, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
            self._queue.put(self._DONE)
        except Exception as e:
            self._queue.put(e)

    def __iter__(self) -> Iterator[Batch]:
        while True:
            item = self._queue.get()
            if item is self._DONE:
                return
            if isinstance(item, Exception):
                raise item
            yield item

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)


def evaluate_loss(model: Model, noisy: np.ndarray, clean: np.ndarray, freq_norm: np.ndarray,
                  weights: LossWeights, chunk_size: int = 4096) -> float:
    """Средняя (по записям) функция потерь на выборке без записи кэшей."""
    total = 0.0
    for start in range(0, noisy.shape[0], chunk_size):
        stop = start + chunk_size
        clean_hat, freq_hat, _ = forward_batch(model, noisy[start:stop])
        value, _, _ = loss_with_grads(clean_hat, clean[start:stop], freq_hat, freq_norm[start:stop], weights)
        total += value * clean_hat.shape[0]
    return total / noisy.shape[0]


def _new_model(config: TrainConfig) -> Model:
    model = build_model(
        input_length=config.ranges.n_samples,
        kernel_size=config.kernel_size,
        channels=config.channel_list(),
        head_channels=config.head_channels,
        dense_units=config.dense_units,
        seed=config.master_seed,
    )
    model.hyperparams["sample_rate_hz"] = config.ranges.sample_rate_hz
    return model


def train(config: TrainConfig) -> Tuple[Model, TrainHistory]:
    """
    Обучает модель и возвращает чекпоинт с минимальной потерей на валидации.

    Обучающие записи имеют номера [0, n_train), валидационные - [n_train, n_train + n_val)
    в потоке generate_dataset(master_seed). Каждая эпоха проходит те же данные в том же
    порядке. Остановка: max_epochs или patience эпох без улучшения больше чем на min_delta.

    Args:
        config: Конфигурация обучения

    Returns:
        Кортеж (model, history)

    Raises:
        ConfigError: Некорректная конфигурация
        TrainingDivergenceError: Нечисловой loss или градиент (с номером эпохи)
    """
    config.validate()
    model = _new_model(config)
    state = AdamState()
    history = TrainHistory()
    weights = config.loss_weights

    logger.info("Генерация валидационной выборки: %d записей", config.n_val)
    val_noisy, val_clean, val_freqs = records_to_arrays(
        list(generate_dataset(config.n_val, config.ranges, config.master_seed, start=config.n_train))
    )
    val_freq_norm = normalize_frequency(val_freqs)

    best_loss = math.inf
    best_params = model.snapshot()
    stall = 0
    n_batches = math.ceil(config.n_train / config.batch_size)

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        prefetcher = BatchPrefetcher(_make_batches(config, 0, config.n_train), config.prefetch)
        total, seen = 0.0, 0
        try:
            progress = tqdm(prefetcher, total=n_batches, desc=f"эпоха {epoch}",
                            disable=not config.show_progress, leave=False)
            for batch in progress:
                value, grads = backward(model, batch, weights)
                if not math.isfinite(value):
                    raise TrainingDivergenceError(f"Нечисловой loss на эпохе {epoch}", epoch=epoch)
                try:
                    optimizer_step(model, grads, state, config.lr)
                except TrainingDivergenceError as e:
                    raise TrainingDivergenceError(f"{e} (эпоха {epoch})", epoch=epoch)
                size = batch[0].shape[0]
                total += value * size
                seen += size
        finally:
            prefetcher.close()

        train_loss = total / max(seen, 1)
        val_loss = evaluate_loss(model, val_noisy, val_clean, val_freq_norm, weights)
        if not math.isfinite(val_loss):
            raise TrainingDivergenceError(f"Нечисловой val_loss на эпохе {epoch}", epoch=epoch)
        seconds = time.perf_counter() - started
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, seconds))
        logger.info("Эпоха %d: train_loss=%.6g val_loss=%.6g (%.1f с)", epoch, train_loss, val_loss, seconds)

        if val_loss < best_loss - config.min_delta:
            best_loss = val_loss
            best_params = model.snapshot()
            history.best_epoch = epoch
            stall = 0
            if config.checkpoint_path:
                save_model(model, config.checkpoint_path)
                logger.info("Чекпоинт обновлен: %s", config.checkpoint_path)
        else:
            stall += 1
            if stall >= config.patience:
                history.stopped_early = True
                logger.warning("Ранняя остановка на эпохе %d: нет улучшения %d эпох", epoch, stall)
                break

    model.set_parameters(best_params)
    return model, history


def validation_frequency_mse(model: Model, config: TrainConfig) -> float:
    """MSE нормированной частоты на валидационной выборке конфига."""
    records = list(generate_dataset(config.n_val, config.ranges, config.master_seed, start=config.n_train))
    noisy, _, freqs = records_to_arrays(records)
    _, freq_hat, _ = forward_batch(model, noisy)
    return float(np.mean((freq_hat.astype(np.float64) - normalize_frequency(freqs)) ** 2))
