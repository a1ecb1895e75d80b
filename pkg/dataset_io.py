# dataset_io.py
# Чтение и запись датасетов в бинарном формате BNDS (little-endian float32)
#
# Формат:
#   magic "BNDS" | version u16 | n_samples u16 | sample_rate f32 | count u64
#   далее count записей: noisy f32 x n | clean f32 x n | frequency f32

import logging
import os
import struct
from contextlib import contextmanager
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from errors import FormatError, PreconditionError
from signal_gen import DatasetRecord, SignalWindow

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"BNDS"
DATASET_VERSION = 1
HEADER = struct.Struct("<4sHHfQ")
_COUNT_OFFSET = 12


def record_dtype(n_samples: int) -> np.dtype:
    """Структурный dtype одной записи для данного n_samples."""
    return np.dtype([
        ("noisy", "<f4", (n_samples,)),
        ("clean", "<f4", (n_samples,)),
        ("frequency", "<f4"),
    ])


@dataclass
class DatasetArrays:
    """Датасет, прочитанный целиком в массивы."""
    noisy: np.ndarray
    clean: np.ndarray
    frequency_hz: np.ndarray
    sample_rate_hz: float
    version: int = DATASET_VERSION

    @property
    def n_samples(self) -> int:
        return int(self.noisy.shape[1])

    def __len__(self) -> int:
        return int(self.noisy.shape[0])

    def records(self) -> Iterator[DatasetRecord]:
        for noisy, clean, freq in zip(self.noisy, self.clean, self.frequency_hz):
            yield DatasetRecord(
                noisy=SignalWindow(noisy, self.sample_rate_hz),
                clean=SignalWindow(clean, self.sample_rate_hz),
                frequency_hz=float(freq),
            )


class DatasetWriter:
    """Потоковая запись записей; количество записей дописывается в заголовок при закрытии."""

    def __init__(self, handle: BinaryIO, n_samples: int, sample_rate_hz: float):
        if not 2 <= n_samples <= 0xFFFF:
            raise PreconditionError(f"n_samples вне диапазона u16: {n_samples}")
        self._handle = handle
        self.n_samples = n_samples
        self.sample_rate_hz = float(sample_rate_hz)
        self.count = 0
        self._dtype = record_dtype(n_samples)
        handle.write(HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n_samples, self.sample_rate_hz, 0))

    def write(self, record: DatasetRecord) -> None:
        """
        Дописывает одну запись.

        Raises:
            PreconditionError: Длина окна или частота дискретизации не совпадают с заголовком
        """
        if record.noisy.n_samples != self.n_samples:
            raise PreconditionError(
                f"Длина записи {record.noisy.n_samples} не совпадает с заголовком {self.n_samples}"
            )
        if record.noisy.sample_rate_hz != self.sample_rate_hz and \
                np.float32(record.noisy.sample_rate_hz) != np.float32(self.sample_rate_hz):
            raise PreconditionError("Частота дискретизации записи не совпадает с заголовком")
        row = np.zeros(1, dtype=self._dtype)
        row["noisy"][0] = record.noisy.samples
        row["clean"][0] = record.clean.samples
        row["frequency"][0] = record.frequency_hz
        self._handle.write(row.tobytes())
        self.count += 1

    def write_all(self, records: Iterable[DatasetRecord]) -> int:
        for record in records:
            self.write(record)
        return self.count

    def finalize(self) -> None:
        self._handle.seek(_COUNT_OFFSET)
        self._handle.write(struct.pack("<Q", self.count))
        self._handle.seek(0, os.SEEK_END)


@contextmanager
def dataset_writer(path: str, n_samples: int, sample_rate_hz: float):
    """
    Context manager для записи датасета.

    При исключении внутри блока частично записанный файл удаляется.

    Args:
        path: Путь к файлу .bnds
        n_samples: Длина окна
        sample_rate_hz: Частота дискретизации

    Yields:
        writer: DatasetWriter
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle = open(path, "wb")
    try:
        writer = DatasetWriter(handle, n_samples, sample_rate_hz)
        yield writer
        writer.finalize()
    except Exception:
        handle.close()
        if os.path.exists(path):
            os.remove(path)
        logger.error("Ошибка записи датасета %s, файл удален", path)
        raise
    handle.close()
    logger.info("Записано %d записей в %s", writer.count, path)


def write_dataset(path: str, records: Iterable[DatasetRecord]) -> int:
    """
    Записывает поток записей в файл. Параметры заголовка берутся из первой записи.

    Returns:
        Количество записанных записей
    """
    iterator = iter(records)
    first = next(iterator, None)
    if first is None:
        raise PreconditionError("Нечего записывать: поток записей пуст")
    with dataset_writer(path, first.noisy.n_samples, first.noisy.sample_rate_hz) as writer:
        writer.write(first)
        writer.write_all(iterator)
        return writer.count


def read_header(handle: BinaryIO):
    """
    Читает и проверяет заголовок.

    Returns:
        Кортеж (version, n_samples, sample_rate_hz, count)

    Raises:
        FormatError: Неверный magic, неизвестная версия или обрезанный заголовок
    """
    raw = handle.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise FormatError("Файл короче заголовка BNDS")
    magic, version, n_samples, sample_rate, count = HEADER.unpack(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"Неверный magic: {magic!r}, ожидался {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"Неподдерживаемая версия формата BNDS: {version}")
    if n_samples < 2 or not sample_rate > 0:
        raise FormatError(f"Некорректный заголовок: n_samples={n_samples}, sample_rate={sample_rate}")
    return version, n_samples, float(sample_rate), count


def read_dataset(path: str) -> DatasetArrays:
    """
    Читает датасет целиком.

    Args:
        path: Путь к файлу .bnds

    Returns:
        DatasetArrays (массивы float64)

    Raises:
        FormatError: Неверный формат или обрезанные данные
        OSError: Файл не читается
    """
    with open(path, "rb") as handle:
        version, n_samples, sample_rate, count = read_header(handle)
        dtype = record_dtype(n_samples)
        payload = handle.read()

    expected = count * dtype.itemsize
    if len(payload) < expected:
        raise FormatError(
            f"Файл обрезан: ожидалось {count} записей ({expected} байт), получено {len(payload)} байт"
        )
    rows = np.frombuffer(payload[:expected], dtype=dtype, count=count)
    return DatasetArrays(
        noisy=rows["noisy"].astype(np.float64),
        clean=rows["clean"].astype(np.float64),
        frequency_hz=rows["frequency"].astype(np.float64),
        sample_rate_hz=sample_rate,
        version=version,
    )


def iter_dataset(path: str) -> Iterator[DatasetRecord]:
    """Итератор по записям файла (через read_dataset)."""
    return read_dataset(path).records()
