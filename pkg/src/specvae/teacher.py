"""Teacher embedding tables: binary storage plus a synthetic stand-in teacher.

SALT file layout (little-endian):
    magic   4 bytes  b"SALT"
    version u32      1
    dim     u32
    count   u64
    records: key_len u16, key utf-8, dim float32

Every embedding is unit-norm; the loader rejects duplicate keys and vectors
whose norm strays more than 1e-3 from 1. Audio records are keyed by their
manifest-relative path; per-class text prompts use "text:<label>" keys.
"""

from __future__ import annotations

import struct

import numpy as np

SALT_MAGIC = b"SALT"
SALT_VERSION = 1
TEXT_PREFIX = "text:"
NORM_TOL = 1e-3


class EmbeddingTable:
    """In-memory key -> unit vector map with a fixed dimension."""

    def __init__(self, dim: int, items: dict[str, np.ndarray] | None = None):
        self.dim = int(dim)
        self._items: dict[str, np.ndarray] = {}
        for k, v in (items or {}).items():
            self.add(k, v)

    def add(self, key: str, vec: np.ndarray):
        v = np.asarray(vec, dtype=np.float32)
        if v.shape != (self.dim,):
            raise ValueError(f"embedding {key!r}: shape {v.shape} != ({self.dim},)")
        if key in self._items:
            raise ValueError(f"duplicate embedding key {key!r}")
        self._items[key] = v

    def __contains__(self, key):
        return key in self._items

    def __getitem__(self, key) -> np.ndarray:
        return self._items[key]

    def get(self, key, default=None):
        return self._items.get(key, default)

    def keys(self):
        return self._items.keys()

    def __len__(self):
        return len(self._items)

    def text_labels(self) -> list[str]:
        return sorted(k[len(TEXT_PREFIX):] for k in self._items if k.startswith(TEXT_PREFIX))


def save_embeddings(path, table: EmbeddingTable):
    with open(path, "wb") as f:
        f.write(SALT_MAGIC)
        f.write(struct.pack("<IIQ", SALT_VERSION, table.dim, len(table)))
        for key in table.keys():
            enc = key.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(np.ascontiguousarray(table[key], dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated embedding file: wanted {n} bytes, got {len(buf)}")
    return buf


def load_embeddings(path) -> EmbeddingTable:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != SALT_MAGIC:
            raise ValueError(f"{path}: not a SALT embedding file")
        version, dim, count = struct.unpack("<IIQ", _read_exact(f, 16))
        if version != SALT_VERSION:
            raise ValueError(f"{path}: unsupported SALT version {version}")
        table = EmbeddingTable(dim)
        for _ in range(count):
            (key_len,) = struct.unpack("<H", _read_exact(f, 2))
            key = _read_exact(f, key_len).decode("utf-8")
            vec = np.frombuffer(_read_exact(f, 4 * dim), dtype="<f4").copy()
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > NORM_TOL:
                raise ValueError(f"{path}: embedding {key!r} has norm {norm:.6f}, want 1")
            table.add(key, vec)
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after {count} records")
    return table


def _orthonormal_anchors(num: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Gram-Schmidt over seeded gaussians: (num, dim) mutually orthogonal units."""
    if num > dim:
        raise ValueError(f"cannot fit {num} orthogonal anchors in {dim} dimensions")
    raw = rng.standard_normal((num, dim))
    basis = []
    for v in raw:
        for b in basis:
            v = v - np.dot(v, b) * b
        n = np.linalg.norm(v)
        if n < 1e-9:
            raise ValueError("degenerate anchor draw")
        basis.append(v / n)
    return np.stack(basis)


def synth_teacher(entries, dim: int = 1024, seed: int = 0,
                  noise_sigma: float = 0.35) -> EmbeddingTable:
    """Fake semantic teacher over labeled manifest entries.

    Each class gets an orthonormal anchor; a clip's embedding is its class
    anchor plus seeded gaussian noise, renormalized. Text keys carry the
    anchors themselves, so zero-shot matching against them is well posed.
    """
    labels = sorted({e.label for e in entries if e.label is not None})
    if not labels:
        raise ValueError("synth_teacher needs labeled manifest entries")
    anchors = _orthonormal_anchors(len(labels), dim,
                                   np.random.default_rng(np.random.SeedSequence((seed, 0xA2C40))))
    table = EmbeddingTable(dim)
    for label, anchor in zip(labels, anchors):
        table.add(TEXT_PREFIX + label, anchor.astype(np.float32))
    for e in entries:
        if e.label is None:
            continue
        rng = np.random.default_rng(np.random.SeedSequence((seed, hash_key(e.rel))))
        vec = anchors[labels.index(e.label)] + noise_sigma * rng.standard_normal(dim)
        table.add(e.rel, (vec / np.linalg.norm(vec)).astype(np.float32))
    return table


def hash_key(key: str) -> int:
    """Stable 63-bit FNV-1a of a record key (process-independent)."""
    h = 0xCBF29CE484222325
    for byte in key.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h >> 1
