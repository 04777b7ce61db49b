"""Batched embedding export: manifest in, SALT table out.

Clips are embedded in manifest order, text anchors come from the job's
label list (default: the labels present in the manifest), and every vector
is unit-normalized before writing regardless of what the backend returned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from specvae.corpus import read_manifest
from specvae.teacher import TEXT_PREFIX, EmbeddingTable, save_embeddings

from .backends import Backend, resolve_backend

TEACHER_DIM = 1024


@dataclass
class ExportJob:
    manifest: str
    out_path: str
    labels: list | None = None     # default: sorted unique manifest labels
    model: str = "stub:0"
    device: str = "cpu"
    batch_size: int = 8


def _load_mono(path: str) -> tuple[np.ndarray, int]:
    sr, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    else:
        data = data.astype(np.float64)
    return data, int(sr)


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("backend produced a zero-norm embedding")
    return rows / norms


def export(job: ExportJob, backend: Backend | None = None) -> dict:
    """Run the job; returns {"written", "skipped", "duplicates", "path"}.

    Unreadable clips are skipped and listed; duplicate manifest keys keep
    their first occurrence with a warning. A backend dimension other than
    1024 aborts before anything is written.
    """
    if backend is None:
        backend = resolve_backend(job.model, job.device)
    if backend.dim != TEACHER_DIM:
        raise ValueError(f"backend dim {backend.dim} != required {TEACHER_DIM}")

    entries = read_manifest(job.manifest)
    seen = set()
    todo, duplicates, skipped = [], [], []
    for e in entries:
        if e.rel in seen:
            duplicates.append(e.rel)
            continue
        seen.add(e.rel)
        todo.append(e)
    if duplicates:
        warnings.warn(f"{len(duplicates)} duplicate manifest keys kept once: "
                      f"{duplicates[:3]}")

    keys, clips, rates = [], [], []
    for e in todo:
        try:
            audio, sr = _load_mono(e.path)
        except (OSError, ValueError) as exc:
            skipped.append((e.rel, str(exc)))
            continue
        keys.append(e.rel)
        clips.append(audio)
        rates.append(sr)
    if clips and len(set(rates)) != 1:
        raise ValueError(f"mixed sample rates in manifest: {sorted(set(rates))}")

    table = EmbeddingTable(TEACHER_DIM)
    for lo in range(0, len(clips), job.batch_size):
        batch = clips[lo:lo + job.batch_size]
        rows = _normalize_rows(np.asarray(
            backend.embed_audio(batch, rates[0]), dtype=np.float64))
        for key, row in zip(keys[lo:lo + job.batch_size], rows):
            table.add(key, row)

    labels = job.labels
    if labels is None:
        labels = sorted({e.label for e in todo if e.label is not None})
    if labels:
        anchors = _normalize_rows(np.asarray(
            backend.embed_text(labels), dtype=np.float64))
        for label, row in zip(labels, anchors):
            table.add(TEXT_PREFIX + label, row)

    Path(job.out_path).parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(job.out_path, table)
    return {"written": len(table), "skipped": skipped,
            "duplicates": duplicates, "path": job.out_path}
