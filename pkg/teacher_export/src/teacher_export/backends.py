"""Embedding backends.

A backend turns mono float audio (or a text label) into a fixed-dimension
embedding. `resolve_backend` maps a model identifier to an instance:
"stub" or "stub:<seed>" gives the deterministic offline backend; anything
else is treated as a hub id for a pretrained CLAP-style model and needs the
optional `clap` extra installed.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np


class Backend(Protocol):
    dim: int

    def embed_audio(self, clips: Sequence[np.ndarray], sample_rate: int) -> np.ndarray:
        """(len(clips), dim) embeddings, one row per clip."""
        ...

    def embed_text(self, labels: Sequence[str]) -> np.ndarray:
        """(len(labels), dim) embeddings, one row per label."""
        ...


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h >> 1


class StubBackend:
    """Deterministic stand-in for a pretrained model.

    Audio is summarized by log-magnitude spectrum bands and pushed through
    a seeded random projection; text labels hash to seeded gaussian vectors.
    Same input always gives the same embedding, so repeat exports agree
    exactly.
    """

    BANDS = 64

    def __init__(self, seed: int = 0, dim: int = 1024):
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x57AB)))
        self._proj = rng.standard_normal((self.BANDS + 1, dim)) / np.sqrt(self.BANDS)

    def _signature(self, audio: np.ndarray) -> np.ndarray:
        x = np.asarray(audio, dtype=np.float64)
        mag = np.abs(np.fft.rfft(x))
        # average the spectrum into equal bands; pad short clips' band count
        edges = np.linspace(0, len(mag), self.BANDS + 1).astype(int)
        bands = np.array([mag[lo:hi].mean() if hi > lo else 0.0
                          for lo, hi in zip(edges, edges[1:])])
        feats = np.log1p(bands)
        rms = float(np.sqrt(np.mean(x ** 2))) if len(x) else 0.0
        return np.concatenate([feats, [np.log1p(rms)]])

    def embed_audio(self, clips, sample_rate):
        rows = [self._signature(c) @ self._proj for c in clips]
        return np.stack(rows)

    def embed_text(self, labels):
        rows = []
        for label in labels:
            rng = np.random.default_rng(
                np.random.SeedSequence((self.seed, _fnv1a(label))))
            rows.append(rng.standard_normal(self.dim))
        return np.stack(rows)


class ClapBackend:
    """Pretrained contrastive language-audio model via transformers.

    Imported lazily so the exporter works offline with the stub backend;
    using this one needs the `clap` extra (transformers + torch).
    """

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import ClapModel, ClapProcessor
        except ImportError as exc:
            raise RuntimeError(
                f"backend {model_id!r} needs the optional clap extra "
                f"(pip install teacher-export[clap])") from exc
        self._torch = torch
        self.device = device
        self.model = ClapModel.from_pretrained(model_id).to(device).eval()
        self.processor = ClapProcessor.from_pretrained(model_id)
        self.dim = int(self.model.config.projection_dim)

    def embed_audio(self, clips, sample_rate):
        inputs = self.processor(audios=[np.asarray(c, dtype=np.float32) for c in clips],
                                sampling_rate=sample_rate, return_tensors="pt")
        inputs = {k: v.to(self.device) for k, v in inputs.items()}
        with self._torch.no_grad():
            feats = self.model.get_audio_features(**inputs)
        return feats.cpu().numpy().astype(np.float64)

    def embed_text(self, labels):
        inputs = self.processor(text=list(labels), return_tensors="pt", padding=True)
        inputs = {k: v.to(self.device) for k, v in inputs.items()}
        with self._torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float64)


def resolve_backend(model: str, device: str = "cpu") -> Backend:
    if model == "stub" or model.startswith("stub:"):
        seed = int(model.partition(":")[2] or 0)
        return StubBackend(seed=seed)
    return ClapBackend(model, device=device)
