# test_app.py
# HTTP сервис: health, оценка окна, метка маски, загрузка датасета

import numpy as np
import pytest
from fastapi.testclient import TestClient

import app as service
from dataset_io import write_dataset
from model_io import save_model
from signal_gen import ParamRanges, generate_dataset, time_grid


@pytest.fixture
def client():
    service._model_cache.clear()
    with TestClient(service.app) as test_client:
        yield test_client
    service._model_cache.clear()


def _tone(freq=300.0, n=50, fs=5000.0, offset=0.0, visibility=1.0):
    t = time_grid(n, fs)
    return (offset + visibility * np.sin(2 * np.pi * freq * t + 0.3)).tolist()


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["model_configured"] is False


def test_estimate_single_tone(client):
    response = client.post("/api/estimate", json={"samples": _tone(300.0), "sample_rate_hz": 5000.0})
    assert response.status_code == 200
    body = response.json()
    assert body["method"] == "st"
    assert body["frequency_hz"] == pytest.approx(300.0, abs=1e-6)
    assert body["edge_bin"] is False
    assert body["duration_s"] == pytest.approx(0.01)


def test_estimate_flags_edge_bin(client):
    samples = [(-1.0) ** k for k in range(50)]
    body = client.post("/api/estimate", json={"samples": samples}).json()
    assert body["edge_bin"] is True
    assert body["frequency_hz"] == pytest.approx(2500.0)


@pytest.mark.parametrize("payload", [
    {},
    {"samples": []},
    {"samples": ["a", "b"]},
    {"samples": [1.0] * 50, "method": "fft"},
    {"samples": [1.0] * 50},
])
def test_estimate_bad_requests(client, payload):
    assert client.post("/api/estimate", json=payload).status_code == 400


def test_estimate_rejects_non_json(client):
    response = client.post("/api/estimate", content=b"[1, 2", headers={"Content-Type": "application/json"})
    assert response.status_code == 400


def test_nn_without_model_is_unavailable(client):
    response = client.post("/api/estimate", json={"samples": _tone(), "method": "nn"})
    assert response.status_code == 503


def test_nn_with_configured_model(client, tmp_path, tiny_model, monkeypatch):
    path = tmp_path / "model.bnmd"
    save_model(tiny_model, str(path))
    monkeypatch.setenv("BEATNOTE_MODEL_PATH", str(path))

    assert client.get("/health").json()["model_configured"] is True
    body = client.post("/api/estimate", json={"samples": _tone(), "method": "nn"}).json()
    assert body["method"] == "nn"
    assert np.isfinite(body["frequency_hz"])


def test_broken_model_file_is_unavailable(client, tmp_path, monkeypatch):
    path = tmp_path / "broken.bnmd"
    path.write_bytes(b"BNMD")
    monkeypatch.setenv("BEATNOTE_MODEL_PATH", str(path))
    response = client.post("/api/estimate", json={"samples": _tone(), "method": "nn"})
    assert response.status_code == 503


def test_mask_classify_labels(client):
    ref = {"ref_mean_hz": 300.0, "ref_sigma_hz": 1.0}

    good = client.post("/api/mask.classify", json={"samples": _tone(300.0, offset=1.0, visibility=0.8), **ref})
    assert good.json()["label"] == 0
    assert 0.75 < good.json()["contrast"] <= 0.8

    shifted = client.post("/api/mask.classify", json={"samples": _tone(400.0, offset=1.0, visibility=0.8), **ref})
    assert shifted.json()["label"] == 1

    split = client.post("/api/mask.classify", json={"samples": _tone(300.0, offset=1.0, visibility=0.2), **ref})
    assert split.json()["label"] == 2


def test_mask_classify_dark_frame_is_split_mode(client):
    # постоянный кадр: оценки нет, но контраст 0 важнее
    body = client.post("/api/mask.classify", json={
        "samples": [1.0] * 50, "ref_mean_hz": 300.0, "ref_sigma_hz": 1.0,
    }).json()
    assert body["label"] == 2
    assert body["frequency_hz"] is None
    assert body["contrast"] == 0.0


def test_mask_classify_estimator_failure_with_good_contrast(client, tmp_path, tiny_model, monkeypatch):
    path = tmp_path / "model.bnmd"
    save_model(tiny_model, str(path))
    monkeypatch.setenv("BEATNOTE_MODEL_PATH", str(path))

    # модель обучена на 5 кГц, окно на 10 кГц оценщик отклоняет
    body = client.post("/api/mask.classify", json={
        "samples": _tone(300.0, fs=10000.0, offset=1.0, visibility=0.8),
        "sample_rate_hz": 10000.0,
        "method": "nn",
        "ref_mean_hz": 300.0,
        "ref_sigma_hz": 1.0,
    }).json()
    assert body["label"] == 1
    assert body["frequency_hz"] is None


def test_mask_classify_needs_reference(client):
    assert client.post("/api/mask.classify", json={"samples": _tone()}).status_code == 400
    response = client.post("/api/mask.classify", json={
        "samples": _tone(), "ref_mean_hz": 300.0, "ref_sigma_hz": -1.0,
    })
    assert response.status_code == 400


def test_infer_upload(client, tmp_path):
    path = tmp_path / "data.bnds"
    write_dataset(str(path), generate_dataset(6, ParamRanges.noiseless(), 4))

    with open(path, "rb") as handle:
        response = client.post(
            "/api/infer.upload",
            files={"dataset": ("data.bnds", handle, "application/octet-stream")},
            data={"method": "st"},
        )
    assert response.status_code == 200
    body = response.json()
    assert body["count"] == 6
    assert body["n_samples"] == 50
    assert body["sample_rate_hz"] == 5000.0
    assert len(body["estimates"]) == 6
    assert all(value is not None for value in body["estimates"])


def test_infer_upload_rejects_garbage(client):
    response = client.post(
        "/api/infer.upload",
        files={"dataset": ("junk.bnds", b"definitely not a dataset", "application/octet-stream")},
    )
    assert response.status_code == 400
