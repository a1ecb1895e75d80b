# config.py
# Загрузка конфигурации: переменные окружения (.env) и файлы key=value для запусков

import dataclasses
import logging
import os
import typing
from typing import Any, Dict, Optional, Type, TypeVar

from dotenv import dotenv_values, load_dotenv

from errors import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Загружаем переменные окружения
load_dotenv()

DEFAULT_LOG_LEVEL = "INFO"


def get_log_level() -> str:
    """Уровень логирования из BEATNOTE_LOG_LEVEL (по умолчанию INFO)."""
    return os.getenv("BEATNOTE_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()


def get_model_path() -> Optional[str]:
    """Путь к модели по умолчанию из BEATNOTE_MODEL_PATH или None."""
    path = os.getenv("BEATNOTE_MODEL_PATH", "").strip()
    return path or None


def get_workers() -> int:
    """Число потоков для свипов из BEATNOTE_WORKERS (по умолчанию 1)."""
    raw = os.getenv("BEATNOTE_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"BEATNOTE_WORKERS должен быть целым числом, получено {raw!r}")
    return max(1, workers)


def load_kv_config(path: str) -> Dict[str, str]:
    """
    Загружает плоский конфиг в формате key=value.

    Формат тот же, что у .env: строки key=value, комментарии через #.

    Args:
        path: Путь к файлу конфига

    Returns:
        Словарь ключ -> строковое значение

    Raises:
        ConfigError: Если файл не найден или в нем есть ключи без значения
    """
    if not os.path.exists(path):
        raise ConfigError(f"Файл конфигурации не найден: {path}")

    raw = dotenv_values(path)
    result = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError(f"Ключ '{key}' в {path} не имеет значения")
        result[key.strip().lower()] = value.strip()

    logger.debug("Загружен конфиг %s: %d ключей", path, len(result))
    return result


def _coerce(value: str, target: Any, key: str) -> Any:
    """Приводит строковое значение к типу поля dataclass."""
    origin = typing.get_origin(target)
    if origin is typing.Union:
        args = [a for a in typing.get_args(target) if a is not type(None)]
        if value.lower() in ("", "none", "null"):
            return None
        return _coerce(value, args[0], key)

    try:
        if target is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if target is int:
            return int(value, 0)
        if target is float:
            return float(value)
        if target is str:
            return value
    except ValueError:
        raise ConfigError(f"Некорректное значение для '{key}': {value!r}")

    raise ConfigError(f"Ключ '{key}' нельзя задать через файл конфига")


def apply_overrides(instance: T, values: Dict[str, str]) -> T:
    """
    Возвращает копию dataclass с полями, замененными значениями из конфига.

    Args:
        instance: Экземпляр dataclass со значениями по умолчанию
        values: Словарь ключ -> строковое значение (из load_kv_config)

    Returns:
        Новый экземпляр того же типа

    Raises:
        ConfigError: Неизвестный ключ или неприводимое значение
    """
    hints = typing.get_type_hints(type(instance))
    field_names = {f.name for f in dataclasses.fields(instance)}
    changes = {}
    for key, value in values.items():
        if key not in field_names:
            raise ConfigError(f"Неизвестный ключ конфигурации: '{key}'")
        changes[key] = _coerce(value, hints[key], key)
    return dataclasses.replace(instance, **changes)


def load_dataclass_config(cls: Type[T], path: str, defaults: Optional[T] = None) -> T:
    """
    Загружает dataclass-конфиг из файла key=value поверх значений по умолчанию.

    Args:
        cls: Класс dataclass (TrainConfig, SweepConfig)
        path: Путь к файлу конфига
        defaults: Базовый экземпляр (если None, cls())

    Returns:
        Экземпляр cls
    """
    base = defaults if defaults is not None else cls()
    return apply_overrides(base, load_kv_config(path))
