"""Manifest I/O and a synthetic four-class corpus for experiments.

A manifest is newline-delimited WAV paths relative to the manifest file,
optionally followed by a tab and a label. The synthetic classes (tone,
chirp, pulse, noise) are built to be separable by temporal/harmonic
structure rather than raw level or bandwidth.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import AudioClip

CLASSES = ["tone", "chirp", "pulse", "noise"]


@dataclass(frozen=True)
class ManifestEntry:
    path: str        # absolute
    rel: str         # as written in the manifest (the stable key)
    label: str | None


def read_manifest(path) -> list[ManifestEntry]:
    base = Path(path).resolve().parent
    entries = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rel, _, label = line.partition("\t")
        entries.append(ManifestEntry(str(base / rel), rel, label or None))
    if not entries:
        raise ValueError(f"{path}: manifest has no entries")
    return entries


def write_manifest(path, rows):
    """rows: iterable of (relative_path, label_or_None)."""
    lines = [rel if label is None else f"{rel}\t{label}" for rel, label in rows]
    Path(path).write_text("\n".join(lines) + "\n")


@lru_cache(maxsize=512)
def load_clip_cached(path: str) -> AudioClip:
    return dsp.load_wav(path)


# -- synthetic classes -----------------------------------------------------------


def _envelope(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    attack = min(int(rng.uniform(0.005, 0.05) * sr), n // 4)
    release = min(int(rng.uniform(0.05, 0.3) * sr), n // 2)
    env = np.ones(n)
    env[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    env[n - release:] = np.linspace(1.0, 0.0, release)
    return env


def synth_tone(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Static harmonic stack with random fundamental and rolloff."""
    f0 = rng.uniform(200.0, 400.0)
    rolloff = rng.uniform(0.8, 1.5)
    harmonics = int(rng.integers(4, 7))
    t = np.arange(n) / sr
    x = np.zeros(n)
    for h in range(1, harmonics + 1):
        if h * f0 >= sr / 2:
            break
        x += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h ** rolloff
    return x * _envelope(n, sr, rng)


def synth_chirp(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Exponential upward frequency sweep."""
    f_lo = rng.uniform(250.0, 450.0)
    f_hi = rng.uniform(2500.0, 4500.0)
    t = np.arange(n) / sr
    dur = n / sr
    k = (f_hi / f_lo) ** (1.0 / dur)
    phase = 2 * np.pi * f_lo * (k ** t - 1.0) / np.log(k)
    return np.sin(phase) * _envelope(n, sr, rng)


def synth_pulse(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Train of sharp decaying pings at random onsets."""
    x = np.zeros(n)
    for _ in range(int(rng.integers(6, 11))):
        onset = int(rng.integers(0, n - sr // 20))
        decay = rng.uniform(0.008, 0.02)
        f0 = rng.uniform(500.0, 2000.0)
        phase = rng.uniform(0, 2 * np.pi)
        length = int(decay * 6 * sr)
        t = np.arange(length) / sr
        burst = np.sin(2 * np.pi * f0 * t + phase) * np.exp(-t / decay)
        hi = min(onset + length, n)
        x[onset:hi] += burst[:hi - onset]
    return x


def synth_noise(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Broadband noise with a random spectral tilt."""
    x = rng.standard_normal(n)
    tilt_db_oct = rng.uniform(-3.0, 3.0)
    octaves = np.log2((sr / 2) / 50.0)
    gains = np.linspace(0.0, tilt_db_oct * octaves, 8)
    clip = dsp.apply_eq(AudioClip(x.astype(np.float32), sr), gains)
    return clip.samples.astype(np.float64)


SYNTHESIZERS = {
    "tone": synth_tone,
    "chirp": synth_chirp,
    "pulse": synth_pulse,
    "noise": synth_noise,
}


def build_synthetic_corpus(out_dir, per_class: int, duration_s: float = 1.0,
                           sample_rate: int = 16000, seed: int = 0) -> str:
    """Write WAVs plus manifest.txt under out_dir; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(duration_s * sample_rate)
    rows = []
    for ci, cls in enumerate(CLASSES):
        for k in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence((seed, ci, k)))
            x = SYNTHESIZERS[cls](rng, n, sample_rate)
            level = rng.uniform(-25.0, -15.0)
            clip = dsp.normalize_rms(AudioClip(x.astype(np.float32), sample_rate), level)
            clip = AudioClip(dsp.soft_clip(clip.samples), sample_rate)
            rel = f"{cls}_{k:03d}.wav"
            dsp.save_wav(out / rel, clip)
            rows.append((rel, cls))
    manifest = out / "manifest.txt"
    write_manifest(manifest, rows)
    return str(manifest)


def entries_with_clips(entries: list[ManifestEntry]):
    """(rel, label, AudioClip) triples ready for batch assembly."""
    return [(e.rel, e.label, load_clip_cached(e.path)) for e in entries]
