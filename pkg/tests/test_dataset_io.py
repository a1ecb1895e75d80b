# test_dataset_io.py
# Формат датасета BNDS: запись, чтение, повреждения

import struct

import numpy as np
import pytest

from dataset_io import DATASET_MAGIC, HEADER, dataset_writer, iter_dataset, read_dataset, write_dataset
from errors import FormatError, PreconditionError
from signal_gen import generate_dataset


def test_write_then_read_preserves_records(tmp_path):
    path = tmp_path / "train.bnds"
    records = list(generate_dataset(5, master_seed=1))
    assert write_dataset(str(path), records) == 5

    data = read_dataset(str(path))
    assert len(data) == 5
    assert data.n_samples == 50
    assert data.sample_rate_hz == 5000.0
    for record, noisy, freq in zip(records, data.noisy, data.frequency_hz):
        np.testing.assert_allclose(noisy, record.noisy.samples, atol=1e-6)
        assert freq == pytest.approx(record.frequency_hz, rel=1e-6)

    again = list(iter_dataset(str(path)))
    assert [r.frequency_hz for r in again] == data.frequency_hz.tolist()


def test_header_layout(tmp_path):
    path = tmp_path / "one.bnds"
    write_dataset(str(path), generate_dataset(1))
    raw = path.read_bytes()
    magic, version, n_samples, rate, count = HEADER.unpack(raw[:HEADER.size])
    assert magic == DATASET_MAGIC
    assert (version, n_samples, rate, count) == (1, 50, 5000.0, 1)
    assert len(raw) == HEADER.size + 4 * (50 + 50 + 1)


def test_bad_magic_is_rejected(tmp_path):
    path = tmp_path / "bad.bnds"
    write_dataset(str(path), generate_dataset(2))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_dataset(str(path))


def test_truncated_file_is_rejected(tmp_path):
    path = tmp_path / "short.bnds"
    write_dataset(str(path), generate_dataset(3))
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(FormatError):
        read_dataset(str(path))


def test_unknown_version_is_rejected(tmp_path):
    path = tmp_path / "v9.bnds"
    write_dataset(str(path), generate_dataset(1))
    raw = bytearray(path.read_bytes())
    raw[4:6] = struct.pack("<H", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_dataset(str(path))


def test_writer_removes_partial_file_on_error(tmp_path):
    path = tmp_path / "partial.bnds"
    records = list(generate_dataset(2))
    with pytest.raises(RuntimeError):
        with dataset_writer(str(path), 50, 5000.0) as writer:
            writer.write(records[0])
            raise RuntimeError("обрыв")
    assert not path.exists()


def test_writer_rejects_mismatched_length(tmp_path):
    path = tmp_path / "mismatch.bnds"
    record = next(generate_dataset(1))
    with pytest.raises(PreconditionError):
        with dataset_writer(str(path), 40, 5000.0) as writer:
            writer.write(record)
    assert not path.exists()


def test_empty_stream_is_rejected(tmp_path):
    with pytest.raises(PreconditionError):
        write_dataset(str(tmp_path / "empty.bnds"), [])
