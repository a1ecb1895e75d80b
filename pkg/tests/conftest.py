# conftest.py
# Общие фикстуры тестов

import os
import sys

import numpy as np
import pytest

# Добавляем путь к модулям проекта
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from nn_core import build_model  # noqa: E402


@pytest.fixture
def tiny_model():
    """Маленькая сеть float32 для быстрых тестов (окно 50 отсчетов)."""
    model = build_model(input_length=50, channels=(4, 4, 4), head_channels=2, dense_units=8, seed=3)
    model.hyperparams["sample_rate_hz"] = 5000.0
    return model


@pytest.fixture
def tiny_model64():
    """Та же архитектура в float64 для проверки градиентов."""
    return build_model(input_length=16, kernel_size=3, channels=(3, 3, 3), head_channels=2,
                       dense_units=5, seed=11, dtype=np.float64)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("BEATNOTE_MODEL_PATH", raising=False)
    monkeypatch.delenv("BEATNOTE_WORKERS", raising=False)
