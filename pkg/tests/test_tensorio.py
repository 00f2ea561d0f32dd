import numpy as np
import pytest

from bwaq import FormatError, read_tensor, write_tensor


def test_round_trip_f64(tmp_path, rng):
    arr = rng.normal(size=(7, 5))
    path = tmp_path / "t.bwat"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, arr)


def test_round_trip_f32(tmp_path, rng):
    arr = rng.normal(size=(3, 4, 2)).astype(np.float32)
    path = tmp_path / "t.bwat"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.bwat"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(FormatError, match="bad magic"):
        read_tensor(path)


def test_truncated_payload(tmp_path, rng):
    path = tmp_path / "t.bwat"
    write_tensor(path, rng.normal(size=(4, 4)))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError, match="unexpected end"):
        read_tensor(path)
