"""Binary serialization: SLWT weight tables and SLZ1 latent files.

Both formats are little-endian and fully specified here:

SLWT (weight table)
    magic   4 bytes  b"SLWT"
    version u32      1
    count   u32      number of tensors
    per tensor, sorted by name:
        name_len u16, name utf-8, rank u8, dims rank*u32, data f32

SLZ1 (latent sequence)
    magic       4 bytes  b"SLZ1"
    version     u32      1
    sample_rate u32
    hop         u32      STFT hop in samples
    time_factor u32      latent frames per STFT frame divisor
    dim         u32      latent channels D
    frames      u64      latent frames M
    data        M*D f32  frame-major (M, D)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

SLWT_MAGIC = b"SLWT"
SLZ1_MAGIC = b"SLZ1"
SLWT_VERSION = 1
SLZ1_VERSION = 1


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def save_weights(path, table: dict[str, np.ndarray]):
    """Write a name->array table; arrays are stored as float32."""
    pth = Path(path)
    with open(pth, "wb") as f:
        f.write(SLWT_MAGIC)
        f.write(struct.pack("<II", SLWT_VERSION, len(table)))
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name], dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != SLWT_MAGIC:
            raise ValueError(f"{path}: not a SLWT weight file")
        version, count = struct.unpack("<II", _read_exact(f, 8))
        if version != SLWT_VERSION:
            raise ValueError(f"{path}: unsupported SLWT version {version}")
        table = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(f, 4 * n), dtype="<f4").reshape(dims)
            if name in table:
                raise ValueError(f"{path}: duplicate tensor name {name!r}")
            table[name] = data.copy()
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after {count} tensors")
    return table


def save_latents(path, mu: np.ndarray, sample_rate: int, hop: int, time_factor: int):
    """Write a (M, D) float32 latent sequence."""
    if mu.ndim != 2:
        raise ValueError(f"latents must be (frames, dim), got shape {mu.shape}")
    m, d = mu.shape
    with open(path, "wb") as f:
        f.write(SLZ1_MAGIC)
        f.write(struct.pack("<IIIII", SLZ1_VERSION, sample_rate, hop, time_factor, d))
        f.write(struct.pack("<Q", m))
        f.write(np.ascontiguousarray(mu, dtype="<f4").tobytes())


def load_latents(path):
    """Returns (mu (M, D) float32, meta dict)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != SLZ1_MAGIC:
            raise ValueError(f"{path}: not a SLZ1 latent file")
        version, sample_rate, hop, time_factor, d = struct.unpack("<IIIII", _read_exact(f, 20))
        if version != SLZ1_VERSION:
            raise ValueError(f"{path}: unsupported SLZ1 version {version}")
        (m,) = struct.unpack("<Q", _read_exact(f, 8))
        mu = np.frombuffer(_read_exact(f, 4 * m * d), dtype="<f4").reshape(m, d).copy()
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after latent data")
    meta = {"sample_rate": sample_rate, "hop": hop, "time_factor": time_factor, "dim": d}
    return mu, meta


def save_json(path, obj: dict):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())
