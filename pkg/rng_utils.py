# rng_utils.py
# Детерминированные генераторы случайных чисел и правило расщепления сидов
#
# Генератор: numpy PCG64 (через numpy.random.Generator).
# Расщепление: seed_i = SeedSequence([master_seed, stream, index]).generate_state(1, uint64)[0].
# SeedSequence хеширует весь список энтропии, поэтому соседние индексы дают
# статистически независимые потоки, и правило воспроизводимо в любой реализации
# numpy >= 1.17.

from typing import Optional

import numpy as np

from errors import PreconditionError

UINT64_MASK = (1 << 64) - 1

# Идентификаторы потоков, чтобы сиды разных назначений не пересекались
STREAM_RECORDS = 0
STREAM_PARAMS = 1
STREAM_NOISE = 2
STREAM_VALIDATION = 3
STREAM_SWEEP = 4
STREAM_INIT = 5
STREAM_SCENARIO = 6
STREAM_BENCH = 7


def check_seed(seed: int) -> int:
    """
    Проверяет, что сид помещается в 64-битное беззнаковое целое.

    Args:
        seed: Сид

    Returns:
        Тот же сид как int

    Raises:
        PreconditionError: Если сид отрицательный или больше 2**64 - 1
    """
    seed = int(seed)
    if seed < 0 or seed > UINT64_MASK:
        raise PreconditionError(f"Сид должен быть 64-битным беззнаковым целым, получено {seed}")
    return seed


def split_seed(master_seed: int, index: int, stream: int = STREAM_RECORDS) -> int:
    """
    Выводит дочерний 64-битный сид по правилу (master_seed, stream, index).

    Args:
        master_seed: Главный сид
        index: Номер записи/частоты/испытания
        stream: Идентификатор потока (STREAM_*)

    Returns:
        Дочерний сид (uint64 как int)
    """
    seq = np.random.SeedSequence([check_seed(master_seed), int(stream), int(index)])
    return int(seq.generate_state(1, np.uint64)[0])


def make_rng(seed: int, stream: Optional[int] = None) -> np.random.Generator:
    """
    Создает генератор PCG64 из сида (и, опционально, идентификатора потока).

    Args:
        seed: 64-битный сид
        stream: Идентификатор потока; None означает сам сид без расщепления

    Returns:
        numpy Generator
    """
    entropy = [check_seed(seed)] if stream is None else [check_seed(seed), int(stream)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
