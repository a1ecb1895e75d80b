# app.py
# FastAPI сервис оценки частоты биений: одиночные окна, метка маски, пакетный инференс по файлу BNDS

import logging
import math
import os
import shutil
import tempfile
import warnings
from typing import Any, Dict, Optional

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from config import get_log_level, get_model_path
from dataset_io import read_dataset
from errors import BeatNoteError, ContrastUndefinedError, EdgeBinWarning
from estimators import estimate_batch, make_estimator
from mask import MaskConfig, MaskLabel, classify_frame, fringe_contrast
from model_io import load_model
from nn_core import Model
from signal_gen import DEFAULT_SAMPLE_RATE_HZ, SignalWindow
from single_tone import Method

logging.basicConfig(level=getattr(logging, get_log_level(), logging.INFO))
logger = logging.getLogger(__name__)

# Создаем FastAPI приложение
app = FastAPI(
    title="Beat Note Estimation API",
    description="Оценка частоты биений кольцевого лазерного гироскопа (ST и нейросеть)",
    version="1.0.0"
)

raw_allowed_origins = os.getenv("ALLOWED_ORIGIN", "")
ALLOWED_ORIGINS = [
    origin.strip().rstrip("/")
    for origin in raw_allowed_origins.split(",")
    if origin.strip()
]

# Настройка CORS (только если заданы источники)
if ALLOWED_ORIGINS:
    app.add_middleware(
        CORSMiddleware,
        allow_origins=ALLOWED_ORIGINS,
        allow_credentials=True,
        allow_methods=["GET", "POST", "OPTIONS"],
        allow_headers=["*"],
    )

MAX_WINDOW_SAMPLES = 1 << 16

# Модель грузится один раз на путь
_model_cache: Dict[str, Model] = {}


def get_service_model() -> Optional[Model]:
    """
    Модель из BEATNOTE_MODEL_PATH (кешируется).

    Returns:
        Model или None, если путь не задан

    Raises:
        HTTPException: Файл модели не читается
    """
    path = get_model_path()
    if not path:
        return None
    if path not in _model_cache:
        try:
            _model_cache[path] = load_model(path)
            logger.info("Загружена модель %s", path)
        except (BeatNoteError, OSError) as e:
            logger.error("Ошибка загрузки модели %s: %s", path, e)
            raise HTTPException(status_code=503, detail=f"Модель недоступна: {e}")
    return _model_cache[path]


def _require_model(method: Method) -> Optional[Model]:
    if method is not Method.NEURAL_NET:
        return None
    model = get_service_model()
    if model is None:
        raise HTTPException(status_code=503, detail="Модель не настроена (BEATNOTE_MODEL_PATH)")
    return model


def _parse_method(value: Any) -> Method:
    try:
        return Method.parse(value or "st")
    except BeatNoteError as e:
        raise HTTPException(status_code=400, detail=str(e))


def _parse_window(body: Dict[str, Any]) -> SignalWindow:
    """Окно из тела запроса {"samples": [...], "sample_rate_hz": ...}."""
    samples = body.get("samples")
    if not isinstance(samples, list) or not samples:
        raise HTTPException(status_code=400, detail="Не указан непустой список samples")
    if len(samples) > MAX_WINDOW_SAMPLES:
        raise HTTPException(status_code=400, detail=f"Окно длиннее {MAX_WINDOW_SAMPLES} отсчетов")
    sample_rate = body.get("sample_rate_hz", DEFAULT_SAMPLE_RATE_HZ)
    try:
        return SignalWindow(np.asarray(samples, dtype=np.float64), float(sample_rate))
    except (TypeError, ValueError) as e:
        raise HTTPException(status_code=400, detail=f"Некорректное окно: {e}")


async def _read_json(request: Request) -> Dict[str, Any]:
    try:
        body = await request.json()
    except ValueError:
        raise HTTPException(status_code=400, detail="Тело запроса должно быть JSON")
    if not isinstance(body, dict):
        raise HTTPException(status_code=400, detail="Тело запроса должно быть JSON-объектом")
    return body


@app.get("/health")
async def health_check():
    """
    Эндпоинт для проверки работоспособности API.
    """
    return {
        "status": "ok",
        "message": "Beat Note Estimation API работает",
        "model_configured": get_model_path() is not None,
    }


@app.post("/api/estimate")
async def estimate(request: Request):
    """
    Оценка частоты одного окна.

    Тело запроса: {"samples": [float], "sample_rate_hz": float, "method": "st"|"nn"}

    Returns:
        JSON с frequency_hz, amplitude, method, edge_bin, duration_s
    """
    body = await _read_json(request)
    method = _parse_method(body.get("method"))
    window = _parse_window(body)
    model = _require_model(method)

    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", EdgeBinWarning)
            result = make_estimator(method, model)(window)
    except BeatNoteError as e:
        raise HTTPException(status_code=400, detail=str(e))

    return {
        "frequency_hz": result.frequency_hz,
        "amplitude": result.amplitude,
        "method": result.method.value,
        "edge_bin": any(issubclass(w.category, EdgeBinWarning) for w in caught),
        "duration_s": window.duration_s,
    }


@app.post("/api/mask.classify")
async def mask_classify(request: Request):
    """
    Метка маски для одного кадра.

    Тело запроса: {"samples": [float], "sample_rate_hz": float, "method": "st"|"nn",
    "ref_mean_hz": float, "ref_sigma_hz": float, "k_sigma": float, "contrast_threshold": float}

    Как в потоковой маске: низкий контраст дает 2, иначе ошибка оценщика дает 1.
    """
    body = await _read_json(request)
    method = _parse_method(body.get("method"))
    window = _parse_window(body)
    if body.get("ref_mean_hz") is None or body.get("ref_sigma_hz") is None:
        raise HTTPException(status_code=400, detail="Не указаны ref_mean_hz и ref_sigma_hz")
    try:
        cfg = MaskConfig(
            ref_mean_hz=float(body["ref_mean_hz"]),
            ref_sigma_hz=float(body["ref_sigma_hz"]),
            k_sigma=float(body.get("k_sigma", 2.0)),
            contrast_threshold=float(body.get("contrast_threshold", 0.5)),
        )
        cfg.validate()
    except (TypeError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    model = _require_model(method)

    try:
        contrast = fringe_contrast(window)
    except ContrastUndefinedError:
        contrast = 0.0

    try:
        estimate_result = make_estimator(method, model)(window)
        frequency = estimate_result.frequency_hz
        label = classify_frame(estimate_result, contrast, cfg)
    except BeatNoteError as e:
        logger.debug("Ошибка оценщика в mask.classify: %s", e)
        frequency = None
        label = MaskLabel.SPLIT_MODE if contrast < cfg.contrast_threshold else MaskLabel.ANOMALY

    return {"label": int(label), "frequency_hz": frequency, "contrast": contrast}


@app.post("/api/infer.upload")
async def infer_upload(
    dataset: UploadFile = File(...),
    method: str = Form("st"),
):
    """
    Пакетный инференс по загруженному файлу BNDS.

    Args:
        dataset: Файл датасета
        method: 'st' или 'nn'

    Returns:
        JSON с count, sample_rate_hz, n_samples и списком estimates (null для отброшенных)
    """
    parsed_method = _parse_method(method)
    model = _require_model(parsed_method)

    temp_dir = tempfile.mkdtemp(prefix="beatnote_")
    try:
        path = os.path.join(temp_dir, "upload.bnds")
        with open(path, "wb") as handle:
            shutil.copyfileobj(dataset.file, handle)
        data = read_dataset(path)
        freqs, valid = estimate_batch(parsed_method, data.noisy, data.sample_rate_hz, model=model)
    except BeatNoteError as e:
        raise HTTPException(status_code=400, detail=f"Ошибка обработки датасета: {e}")
    finally:
        shutil.rmtree(temp_dir, ignore_errors=True)

    estimates = [float(f) if ok and math.isfinite(f) else None for f, ok in zip(freqs, valid)]
    return {
        "count": len(data),
        "sample_rate_hz": data.sample_rate_hz,
        "n_samples": data.n_samples,
        "method": parsed_method.value,
        "estimates": estimates,
    }


@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc):
    return JSONResponse(
        status_code=exc.status_code,
        content={"detail": exc.detail}
    )


# Запуск приложения
if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "app:app",
        host=os.getenv("HOST", "0.0.0.0"),
        port=int(os.getenv("PORT", "8000")),
        reload=False,
        log_level="info"
    )
