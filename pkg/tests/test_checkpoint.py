import numpy as np
import pytest

from failgen.checkpoint import (CheckpointError, load_checkpoint,
                                require_config_hash, save_checkpoint)


def sample_arrays():
    rng = np.random.default_rng(0)
    return {
        "net.weight": rng.standard_normal((8, 4, 3)).astype(np.float32),
        "net.bias": rng.standard_normal(8).astype(np.float32),
        "schedule.betas": rng.uniform(1e-4, 0.02, 200),
        "counter": np.arange(5, dtype=np.int64),
    }


def test_round_trip_is_bit_exact(tmp_path):
    path = tmp_path / "model.ckpt"
    header = {"kind": "test", "config_hash": "abc123", "nested": {"a": 1}}
    arrays = sample_arrays()
    save_checkpoint(path, header, arrays)
    header2, arrays2 = load_checkpoint(path)
    assert header2 == header
    assert set(arrays2) == set(arrays)
    for name in arrays:
        assert arrays[name].dtype == arrays2[name].dtype
        assert arrays[name].shape == arrays2[name].shape
        assert np.array_equal(
            arrays[name].view(np.uint8) if arrays[name].ndim else arrays[name],
            arrays2[name].view(np.uint8) if arrays2[name].ndim else arrays2[name])


def test_save_load_save_produces_identical_bytes(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, {"kind": "t"}, sample_arrays())
    header, arrays = load_checkpoint(p1)
    save_checkpoint(p2, header, arrays)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"kind": "t"}, sample_arrays())
    data = path.read_bytes()
    path.write_bytes(data[:len(data) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        save_checkpoint(tmp_path / "x.ckpt", {},
                        {"bad": np.zeros(3, dtype=np.float16)})


def test_config_hash_mismatch_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="hash"):
        require_config_hash({"config_hash": "aaaa"}, "bbbb", "f.ckpt")
    require_config_hash({"config_hash": "aaaa"}, "aaaa", "f.ckpt")
