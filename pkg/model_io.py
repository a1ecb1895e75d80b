# model_io.py
# Сохранение и загрузка модели в формате BNMD
#
# Формат (little-endian):
#   magic "BNMD" | version u16 | длина дескриптора u32 | дескриптор (JSON, utf-8)
#   | число тензоров u32 | для каждого: длина имени u16, имя, ndim u8, dims u32 x ndim, данные f32

import json
import logging
import os
import struct
from typing import BinaryIO, Dict

import numpy as np

from errors import FormatError
from nn_core import MODEL_FORMAT_VERSION, Model, layer_from_description

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"BNMD"
SUPPORTED_VERSIONS = {MODEL_FORMAT_VERSION}


def _read_exact(handle: BinaryIO, size: int) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise FormatError("Файл модели обрезан")
    return data


def save_model(model: Model, path: str) -> None:
    """
    Сохраняет модель: дескриптор архитектуры и именованные тензоры float32.

    Args:
        model: Модель
        path: Путь к файлу .bnmd
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)

    descriptor = json.dumps(model.architecture(), sort_keys=True).encode("utf-8")
    params = model.parameters()
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<HI", model.format_version, len(descriptor)))
        handle.write(descriptor)
        handle.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", value.ndim))
            handle.write(struct.pack(f"<{value.ndim}I", *value.shape))
            handle.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    # атомарная замена, чтобы чекпоинт не остался полузаписанным
    os.replace(tmp_path, path)
    logger.debug("Модель сохранена в %s (%d тензоров)", path, len(params))


def load_model(path: str) -> Model:
    """
    Загружает модель из файла BNMD.

    Args:
        path: Путь к файлу

    Returns:
        Model с параметрами float32

    Raises:
        FormatError: Неверный magic, неизвестная версия, обрезанный файл или несовпадение тензоров
        OSError: Файл не читается
    """
    with open(path, "rb") as handle:
        magic = _read_exact(handle, 4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"Неверный magic: {magic!r}, ожидался {MODEL_MAGIC!r}")
        version, descriptor_len = struct.unpack("<HI", _read_exact(handle, 6))
        if version not in SUPPORTED_VERSIONS:
            raise FormatError(f"Неподдерживаемая версия формата модели: {version}")
        try:
            descriptor = json.loads(_read_exact(handle, descriptor_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"Поврежденный дескриптор архитектуры: {e}")

        (count,) = struct.unpack("<I", _read_exact(handle, 4))
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(handle, 2))
            name = _read_exact(handle, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(handle, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(handle, 4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(handle, 4 * size), dtype="<f4").astype(np.float32)
            tensors[name] = data.reshape(shape)

    try:
        layers = [layer_from_description(desc) for desc in descriptor["layers"]]
        model = Model(
            layers=layers,
            denoiser_depth=int(descriptor["denoiser_depth"]),
            input_length=int(descriptor["input_length"]),
            hyperparams=descriptor.get("hyperparams", {}),
            format_version=version,
        )
    except KeyError as e:
        raise FormatError(f"В дескрипторе архитектуры нет поля {e}")

    expected = set(model.parameters())
    if expected != set(tensors):
        missing = sorted(expected - set(tensors))
        extra = sorted(set(tensors) - expected)
        raise FormatError(f"Тензоры не совпадают с архитектурой: нет {missing}, лишние {extra}")
    model.set_parameters(tensors)
    logger.debug("Модель загружена из %s", path)
    return model
