"""Binary weight-table and latent-file formats."""

import struct

import numpy as np
import pytest

from specvae import checkpoint as ck


def test_weights_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    table = {
        "enc.0.weight": rng.standard_normal((4, 2, 3, 3)).astype(np.float32),
        "enc.0.bias": rng.standard_normal(4).astype(np.float32),
        "scalar": np.float32(1.5).reshape(()),
    }
    path = tmp_path / "w.slwt"
    ck.save_weights(path, table)
    loaded = ck.load_weights(path)
    assert set(loaded) == set(table)
    for k in table:
        np.testing.assert_array_equal(loaded[k], np.asarray(table[k], dtype=np.float32))


def test_weights_bytes_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    table = {f"p{i}": rng.standard_normal(7).astype(np.float32) for i in range(5)}
    a, b = tmp_path / "a.slwt", tmp_path / "b.slwt"
    ck.save_weights(a, table)
    ck.save_weights(b, dict(reversed(list(table.items()))))  # insertion order differs
    assert a.read_bytes() == b.read_bytes()


def test_weights_bad_magic(tmp_path):
    path = tmp_path / "bad.slwt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="SLWT"):
        ck.load_weights(path)


def test_weights_truncated(tmp_path):
    path = tmp_path / "w.slwt"
    ck.save_weights(path, {"x": np.ones(10, dtype=np.float32)})
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        ck.load_weights(path)


def test_weights_trailing_bytes(tmp_path):
    path = tmp_path / "w.slwt"
    ck.save_weights(path, {"x": np.ones(3, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        ck.load_weights(path)


def test_weights_wrong_version(tmp_path):
    path = tmp_path / "w.slwt"
    ck.save_weights(path, {"x": np.ones(3, dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version"):
        ck.load_weights(path)


def test_latents_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    mu = rng.standard_normal((79, 64)).astype(np.float32)
    path = tmp_path / "z.slz1"
    ck.save_latents(path, mu, sample_rate=16000, hop=256, time_factor=8)
    out, meta = ck.load_latents(path)
    np.testing.assert_array_equal(out, mu)
    assert meta == {"sample_rate": 16000, "hop": 256, "time_factor": 8, "dim": 64}


def test_latents_reject_bad_shape(tmp_path):
    with pytest.raises(ValueError, match="frames, dim"):
        ck.save_latents(tmp_path / "z.slz1", np.zeros((2, 3, 4), dtype=np.float32),
                        16000, 256, 8)


def test_latents_bad_magic(tmp_path):
    path = tmp_path / "z.slz1"
    path.write_bytes(b"WHAT" + b"\x00" * 32)
    with pytest.raises(ValueError, match="SLZ1"):
        ck.load_latents(path)
