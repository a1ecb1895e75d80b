# nn_core.py
# Минимальный движок сети на numpy: Conv1D, Dense, ReLU, Flatten, MSE, обратный проход, Adam
#
# Тензор - непрерывный numpy.ndarray (row-major). Раскладка активаций: (batch, channels, length).
# Слои не хранят состояние прохода: forward возвращает кэш, backward принимает его,
# поэтому одну модель можно читать из нескольких потоков.

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import PreconditionError, ShapeError, TrainingDivergenceError
from rng_utils import STREAM_INIT, make_rng
from signal_gen import SignalWindow

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
FREQ_MIN_HZ = 100.0
FREQ_SPAN_HZ = 400.0
STANDARDIZE_EPS = 1e-8

Gradients = Dict[str, np.ndarray]


def normalize_frequency(freq_hz):
    """f_norm = (f - 100) / 400: [100, 500] Гц -> [0, 1]."""
    return (np.asarray(freq_hz, dtype=np.float64) - FREQ_MIN_HZ) / FREQ_SPAN_HZ


def denormalize_frequency(freq_norm):
    """Обратное к normalize_frequency."""
    return np.asarray(freq_norm, dtype=np.float64) * FREQ_SPAN_HZ + FREQ_MIN_HZ


def standardize(x: np.ndarray) -> np.ndarray:
    """Вычитает среднее окна и делит на его std (+eps); нулевое окно остается нулевым."""
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    return (x - mean) / (std + STANDARDIZE_EPS)


class Layer:
    """Базовый слой: параметры по имени, forward -> (y, cache), backward -> (dx, grads)."""
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache: Any) -> Tuple[np.ndarray, Gradients]:
        raise NotImplementedError

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return input_shape

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "kind": self.kind}

    def full_name(self, param: str) -> str:
        return f"{self.name}.{param}"


def _uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    # масштаб He для ReLU: U(-sqrt(6 / fan_in), sqrt(6 / fan_in))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1D(Layer):
    """
    Одномерная свертка с паддингом 'same' (нечетное ядро), шаг 1.

    Веса (out_channels, in_channels, kernel), смещения (out_channels,).
    Реализация через im2col: окна (B*L, C*K) @ W^T.
    """
    kind = "conv1d"

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel_size: int,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__(name)
        if kernel_size % 2 != 1:
            raise ShapeError(f"Размер ядра должен быть нечетным для паддинга 'same': {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.pad = (kernel_size - 1) // 2
        fan_in = in_channels * kernel_size
        rng = rng or make_rng(0, STREAM_INIT)
        self.params = {
            "weight": _uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in, dtype),
            "bias": np.zeros(out_channels, dtype=dtype),
        }

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: ожидалось (B, {self.in_channels}, L), получено {x.shape}")
        batch, channels, length = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad)))
        # (B, C, L, K) -> (B, L, C, K) -> (B*L, C*K)
        cols = sliding_window_view(xp, self.kernel_size, axis=2)
        cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(batch * length, channels * self.kernel_size)
        w = self.params["weight"].reshape(self.out_channels, -1)
        y = cols @ w.T + self.params["bias"]
        y = y.reshape(batch, length, self.out_channels).transpose(0, 2, 1)
        return np.ascontiguousarray(y), (cols, x.shape)

    def backward(self, dy: np.ndarray, cache: Any) -> Tuple[np.ndarray, Gradients]:
        cols, x_shape = cache
        batch, channels, length = x_shape
        k = self.kernel_size
        dyr = dy.transpose(0, 2, 1).reshape(batch * length, self.out_channels)
        w = self.params["weight"].reshape(self.out_channels, -1)

        dw = (dyr.T @ cols).reshape(self.params["weight"].shape)
        db = dyr.sum(axis=0)

        dcols = (dyr @ w).reshape(batch, length, channels, k)
        dxp = np.zeros((batch, channels, length + 2 * self.pad), dtype=dy.dtype)
        for j in range(k):
            dxp[:, :, j:j + length] += dcols[:, :, :, j].transpose(0, 2, 1)
        dx = dxp[:, :, self.pad:self.pad + length]
        return np.ascontiguousarray(dx), {self.full_name("weight"): dw, self.full_name("bias"): db}

    def output_shape(self, input_shape):
        if input_shape[0] != self.in_channels:
            raise ShapeError(f"{self.name}: ожидалось {self.in_channels} каналов, получено {input_shape[0]}")
        return (self.out_channels, input_shape[1])

    def describe(self):
        return {**super().describe(), "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_size": self.kernel_size}


class Dense(Layer):
    """Полносвязный слой: y = x @ W + b, W формы (in_features, out_features)."""
    kind = "dense"

    def __init__(self, name: str, in_features: int, out_features: int,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or make_rng(0, STREAM_INIT)
        self.params = {
            "weight": _uniform_init(rng, (in_features, out_features), in_features, dtype),
            "bias": np.zeros(out_features, dtype=dtype),
        }

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: ожидалось (B, {self.in_features}), получено {x.shape}")
        return x @ self.params["weight"] + self.params["bias"], x

    def backward(self, dy, cache):
        x = cache
        grads = {self.full_name("weight"): x.T @ dy, self.full_name("bias"): dy.sum(axis=0)}
        return dy @ self.params["weight"].T, grads

    def output_shape(self, input_shape):
        if input_shape != (self.in_features,):
            raise ShapeError(f"{self.name}: ожидалось ({self.in_features},), получено {input_shape}")
        return (self.out_features,)

    def describe(self):
        return {**super().describe(), "in_features": self.in_features, "out_features": self.out_features}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), {}

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


LAYER_KINDS = {cls.kind: cls for cls in (Conv1D, Dense, ReLU, Flatten)}


@dataclass
class LossWeights:
    """Веса двух слагаемых функции потерь."""
    w_clean: float = 1.0
    w_freq: float = 1.0

    def __post_init__(self):
        if self.w_clean < 0 or self.w_freq < 0:
            raise PreconditionError("Веса функции потерь должны быть >= 0")
        if self.w_clean == 0 and self.w_freq == 0:
            raise PreconditionError("Хотя бы один вес функции потерь должен быть > 0")


@dataclass
class Model:
    """
    Сеть шумоподавление + регрессия.

    layers[:denoiser_depth] переводят стандартизованное окно (B, 1, L) в чистую
    синусоиду (B, 1, L); остальные слои по ней регрессируют нормированную частоту (B, 1).
    """
    layers: List[Layer]
    denoiser_depth: int
    input_length: int
    hyperparams: Dict[str, Any] = field(default_factory=dict)
    format_version: int = MODEL_FORMAT_VERSION

    def __post_init__(self):
        self.check_shapes()

    @property
    def denoiser(self) -> List[Layer]:
        return self.layers[:self.denoiser_depth]

    @property
    def regressor(self) -> List[Layer]:
        return self.layers[self.denoiser_depth:]

    def check_shapes(self) -> None:
        """
        Проверяет совместимость форм по цепочке слоев.

        Raises:
            ShapeError: Формы не стыкуются, денойзер меняет длину или выход регрессора не скаляр
        """
        shape = (1, self.input_length)
        for layer in self.denoiser:
            shape = layer.output_shape(shape)
        if shape != (1, self.input_length):
            raise ShapeError(f"Денойзер должен возвращать (1, {self.input_length}), получено {shape}")
        for layer in self.regressor:
            shape = layer.output_shape(shape)
        if shape != (1,):
            raise ShapeError(f"Регрессор должен возвращать скаляр, получено {shape}")

    def parameters(self) -> Dict[str, np.ndarray]:
        """Все обучаемые тензоры по полному имени (в порядке слоев)."""
        return {layer.full_name(key): value for layer in self.layers for key, value in layer.params.items()}

    def set_parameters(self, values: Dict[str, np.ndarray]) -> None:
        """
        Заменяет значения параметров (копированием в существующие массивы).

        Raises:
            ShapeError: Нет параметра с таким именем или форма не совпадает
        """
        for layer in self.layers:
            for key, current in layer.params.items():
                name = layer.full_name(key)
                if name not in values:
                    raise ShapeError(f"Нет значения для параметра {name}")
                value = np.asarray(values[name])
                if value.shape != current.shape:
                    raise ShapeError(f"{name}: форма {value.shape} != {current.shape}")
                current[...] = value

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.parameters().items()}

    def architecture(self) -> Dict[str, Any]:
        """Дескриптор архитектуры для файла модели."""
        return {
            "input_length": self.input_length,
            "denoiser_depth": self.denoiser_depth,
            "hyperparams": self.hyperparams,
            "layers": [layer.describe() for layer in self.layers],
        }

    @property
    def dtype(self):
        params = self.parameters()
        return next(iter(params.values())).dtype if params else np.float32


def build_model(
    input_length: int = 50,
    kernel_size: int = 5,
    channels: Tuple[int, ...] = (16, 32, 32),
    head_channels: int = 16,
    dense_units: int = 64,
    seed: int = 0,
    dtype=np.float32,
) -> Model:
    """
    Собирает сеть: три ConvBlock (Conv1D + ReLU) и линейная проекция в один канал
    для шумоподавления; Conv1D + ReLU + Flatten + Dense + ReLU + Dense(1) для регрессии.

    Args:
        input_length: Длина окна
        kernel_size: Размер ядер сверток
        channels: Каналы трех блоков шумоподавления
        head_channels: Каналы свертки регрессора
        dense_units: Нейроны скрытого полносвязного слоя
        seed: Сид инициализации весов
        dtype: Тип параметров (float32 для обучения и файлов, float64 для проверки градиентов)

    Returns:
        Model
    """
    rng = make_rng(seed, STREAM_INIT)
    layers: List[Layer] = []
    in_ch = 1
    for index, out_ch in enumerate(channels, start=1):
        layers.append(Conv1D(f"denoise.block{index}.conv", in_ch, out_ch, kernel_size, rng, dtype))
        layers.append(ReLU(f"denoise.block{index}.relu"))
        in_ch = out_ch
    layers.append(Conv1D("denoise.proj", in_ch, 1, kernel_size, rng, dtype))
    denoiser_depth = len(layers)

    layers.extend([
        Conv1D("regress.conv", 1, head_channels, kernel_size, rng, dtype),
        ReLU("regress.relu1"),
        Flatten("regress.flatten"),
        Dense("regress.dense1", head_channels * input_length, dense_units, rng, dtype),
        ReLU("regress.relu2"),
        Dense("regress.out", dense_units, 1, rng, dtype),
    ])
    hyperparams = {
        "kernel_size": kernel_size,
        "channels": list(channels),
        "head_channels": head_channels,
        "dense_units": dense_units,
    }
    return Model(layers=layers, denoiser_depth=denoiser_depth, input_length=input_length, hyperparams=hyperparams)


def layer_from_description(desc: Dict[str, Any], dtype=np.float32) -> Layer:
    """Создает слой по описанию из дескриптора архитектуры (веса потом загружаются отдельно)."""
    kind = desc.get("kind")
    name = desc["name"]
    if kind == Conv1D.kind:
        return Conv1D(name, desc["in_channels"], desc["out_channels"], desc["kernel_size"], dtype=dtype)
    if kind == Dense.kind:
        return Dense(name, desc["in_features"], desc["out_features"], dtype=dtype)
    if kind in LAYER_KINDS:
        return LAYER_KINDS[kind](name)
    raise ShapeError(f"Неизвестный тип слоя: {kind}")


def _run(layers: List[Layer], x: np.ndarray, record: bool):
    caches = []
    for layer in layers:
        x, cache = layer.forward(x)
        if record:
            caches.append(cache)
    return x, caches


def forward_batch(model: Model, noisy: np.ndarray, record: bool = False):
    """
    Прямой проход для пачки окон.

    Args:
        model: Модель
        noisy: Массив (B, L) или (L,)
        record: Сохранить кэши для обратного прохода

    Returns:
        Кортеж (clean_hat (B, L), freq_hat_norm (B,), caches или None)

    Raises:
        ShapeError: Длина окна не совпадает с input_length модели
    """
    x = np.atleast_2d(np.asarray(noisy))
    if x.ndim != 2 or x.shape[1] != model.input_length:
        raise ShapeError(f"Ожидались окна длины {model.input_length}, получено {x.shape}")
    x = standardize(x.astype(np.float64)).astype(model.dtype)[:, np.newaxis, :]

    clean_hat, den_caches = _run(model.denoiser, x, record)
    freq, reg_caches = _run(model.regressor, clean_hat, record)
    caches = (den_caches, reg_caches) if record else None
    return clean_hat[:, 0, :], freq[:, 0], caches


def forward(model: Model, noisy: SignalWindow) -> Tuple[SignalWindow, float]:
    """
    Прямой проход для одного окна.

    Args:
        model: Модель
        noisy: Зашумленное окно длины model.input_length

    Returns:
        Кортеж (clean_hat, freq_hat_norm); частота нормирована (см. denormalize_frequency)

    Raises:
        ShapeError: Длина окна не совпадает с моделью
    """
    clean_hat, freq, _ = forward_batch(model, noisy.samples[np.newaxis, :])
    return SignalWindow(clean_hat[0].astype(np.float64), noisy.sample_rate_hz), float(freq[0])


def loss(clean_hat, clean, freq_hat_norm, freq_norm, w: Optional[LossWeights] = None) -> float:
    """
    w_clean * MSE(clean_hat, clean) + w_freq * mean((freq_hat_norm - freq_norm)^2).

    Raises:
        ShapeError: Несовпадение форм
    """
    value, _, _ = loss_with_grads(clean_hat, clean, freq_hat_norm, freq_norm, w)
    return value


def loss_with_grads(clean_hat, clean, freq_hat_norm, freq_norm, w: Optional[LossWeights] = None):
    """
    Значение функции потерь и градиенты по обоим выходам.

    Returns:
        Кортеж (loss, d_clean_hat, d_freq_hat)
    """
    w = w or LossWeights()
    ch = np.asarray(clean_hat, dtype=np.float64)
    c = np.asarray(clean, dtype=np.float64)
    fh = np.atleast_1d(np.asarray(freq_hat_norm, dtype=np.float64))
    f = np.atleast_1d(np.asarray(freq_norm, dtype=np.float64))
    if ch.shape != c.shape:
        raise ShapeError(f"Формы clean_hat {ch.shape} и clean {c.shape} не совпадают")
    if fh.shape != f.shape:
        raise ShapeError(f"Формы freq_hat {fh.shape} и freq {f.shape} не совпадают")

    r_clean = ch - c
    r_freq = fh - f
    value = w.w_clean * float(np.mean(r_clean ** 2)) + w.w_freq * float(np.mean(r_freq ** 2))
    d_clean = 2.0 * w.w_clean * r_clean / r_clean.size
    d_freq = 2.0 * w.w_freq * r_freq / r_freq.size
    return value, d_clean, d_freq


def _back(layers: List[Layer], caches, dy, grads: Gradients):
    for layer, cache in zip(reversed(layers), reversed(caches)):
        dy, layer_grads = layer.backward(dy, cache)
        grads.update(layer_grads)
    return dy


def backward(model: Model, batch, w: Optional[LossWeights] = None) -> Tuple[float, Gradients]:
    """
    Записывает прямой проход по пачке и возвращает loss и градиенты всех параметров.

    Градиент чистого выхода складывается из слагаемого MSE и вклада регрессора.

    Args:
        model: Модель
        batch: Кортеж (noisy (B, L), clean (B, L), freq_norm (B,))
        w: Веса функции потерь

    Returns:
        Кортеж (loss, gradients по полным именам параметров)
    """
    noisy, clean, freq_norm = batch
    clean_hat, freq_hat, caches = forward_batch(model, noisy, record=True)
    den_caches, reg_caches = caches
    value, d_clean, d_freq = loss_with_grads(clean_hat, clean, freq_hat, freq_norm, w)

    dtype = model.dtype
    grads: Gradients = {}
    d_reg_in = _back(model.regressor, reg_caches, d_freq.astype(dtype)[:, np.newaxis], grads)
    d_den_out = d_reg_in + d_clean.astype(dtype)[:, np.newaxis, :]
    _back(model.denoiser, den_caches, d_den_out, grads)
    return value, grads


@dataclass
class AdamState:
    """Состояние Adam: моменты по имени параметра и номер шага."""
    beta1: float = 0.8
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(params: Dict[str, np.ndarray], grads: Gradients, state: AdamState, lr: float) -> AdamState:
    """
    Один шаг Adam по словарю параметров (обновление на месте).

    Raises:
        TrainingDivergenceError: Нечисловой градиент
        ShapeError: Форма градиента не совпадает с параметром
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergenceError(f"Нечисловой градиент параметра {name}")

    state.step += 1
    t = state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"Градиент {name}: форма {grad.shape} != {param.shape}")
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        param -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    return state


def optimizer_step(model: Model, gradients: Gradients, state: AdamState, lr: float) -> Tuple[Model, AdamState]:
    """
    Шаг оптимизатора по параметрам модели.

    Args:
        model: Модель (обновляется на месте)
        gradients: Градиенты из backward
        state: Состояние Adam
        lr: Шаг обучения

    Returns:
        Кортеж (model, state)

    Raises:
        TrainingDivergenceError: Нечисловой градиент
    """
    adam_update(model.parameters(), gradients, state, lr)
    return model, state
