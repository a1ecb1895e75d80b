# errors.py
# Иерархия исключений тулкита (генератор, оценщики, сеть, маска, форматы файлов)


class BeatNoteError(Exception):
    """Базовое исключение для всех ошибок тулкита."""


class RangeError(BeatNoteError, ValueError):
    """Некорректный интервал параметров генератора (lo > hi или вне допустимых границ)."""


class PreconditionError(BeatNoteError, ValueError):
    """Нарушено предусловие операции (Найквист, длина окна и т.п.)."""


class EmptyDatasetError(BeatNoteError, ValueError):
    """Запрошен пустой набор данных или передан пустой массив оценок."""


class DomainError(BeatNoteError, ValueError):
    """Аргументы вне области определения (геометрия резонатора, угол)."""


class NoToneError(BeatNoteError, ValueError):
    """В окне нет тона: все отсчеты одинаковы."""


class ShapeError(BeatNoteError, ValueError):
    """Несовпадение размерностей тензоров."""


class TrainingDivergenceError(BeatNoteError, RuntimeError):
    """Обучение разошлось: нечисловой loss или градиент."""

    def __init__(self, message: str, epoch: int = -1):
        super().__init__(message)
        self.epoch = epoch


class ContrastUndefinedError(BeatNoteError, ValueError):
    """Контраст полос не определен: I_max + I_min <= 0."""


class ConfigError(BeatNoteError, ValueError):
    """Ошибка конфигурации (неизвестный ключ, неверное значение, несовпадение сеток)."""


class FormatError(BeatNoteError, ValueError):
    """Неверный формат файла (magic, версия, обрезанные данные)."""


class EstimatorError(BeatNoteError, RuntimeError):
    """Оценщик не может быть построен или не смог обработать окно."""


class EdgeBinWarning(UserWarning):
    """Пик спектра на краю (DC или Найквист): оценка без интерполяции."""
