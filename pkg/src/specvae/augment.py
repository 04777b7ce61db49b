"""Stochastic augmentation chains and positive-pair mixing.

Randomness is stateless: every draw comes from a generator keyed on
(seed, step, pair, role), so a batch is a pure function of its key and
training can resume bit-exactly. A positive pair shares its content
draws (source crops, loudness targets) and differs only in the two
view generators that drive the effect chains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .dsp import AudioClip


def rng_for(*key) -> np.random.Generator:
    """Deterministic generator for a structured integer key."""
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass
class SourceAugSpec:
    """Per-source effect chain: each effect fires with its own probability."""

    pitch_p: float = 0.3
    pitch_semitones: tuple = (-4.0, 4.0)
    shift_p: float = 0.5
    shift_max_frac: float = 0.25
    eq_p: float = 0.5
    eq_db: tuple = (-12.0, 12.0)
    eq_bands: int = 8
    reverb_p: float = 0.3
    reverb_rt60: tuple = (0.1, 0.6)
    distort_p: float = 0.2
    distort_drive: tuple = (1.0, 6.0)
    gain_p: float = 1.0
    gain_db: tuple = (-6.0, 6.0)
    jump_p: float = 0.2
    jump_db: tuple = (-12.0, 12.0)
    loudness_p: float = 1.0
    loudness_dbfs: tuple = (-30.0, -10.0)

    @classmethod
    def none(cls) -> "SourceAugSpec":
        return cls(pitch_p=0, shift_p=0, eq_p=0, reverb_p=0, distort_p=0,
                   gain_p=0, jump_p=0, loudness_p=0)


@dataclass
class MicDegradeSpec:
    """Post-mix degradation chain applied to each view independently."""

    bandpass_p: float = 0.3
    bandpass_lo_hz: tuple = (50.0, 400.0)
    bandpass_hi_hz: tuple = (2000.0, 7900.0)
    mask_p: float = 0.3
    mask_bands: int = 2
    mask_band_bins: tuple = (4, 30)
    mask_spans: int = 1
    mask_span_frames: tuple = (2, 12)
    codec_p: float = 0.2
    codec_bits: tuple = (4, 10)
    codec_cutoff_hz: tuple = (2000.0, 7000.0)
    noise_p: float = 0.4
    noise_snr_db: tuple = (5.0, 30.0)

    @classmethod
    def none(cls) -> "MicDegradeSpec":
        return cls(bandpass_p=0, mask_p=0, codec_p=0, noise_p=0)


def _u(rng, lohi):
    return float(rng.uniform(lohi[0], lohi[1]))


def apply_source_chain(clip: AudioClip, spec: SourceAugSpec,
                       rng: np.random.Generator) -> AudioClip:
    """Run the per-source effects in a fixed order with Bernoulli gates.

    Every gate and parameter is drawn unconditionally so the generator
    stream advances identically whatever fires.
    """
    draws = rng.random(7)
    pitch = _u(rng, spec.pitch_semitones)
    shift = int(rng.integers(0, max(1, int(len(clip) * spec.shift_max_frac)) + 1))
    eq = rng.uniform(spec.eq_db[0], spec.eq_db[1], spec.eq_bands)
    rt60 = _u(rng, spec.reverb_rt60)
    ir_seed = int(rng.integers(0, 2 ** 31))
    drive = _u(rng, spec.distort_drive)
    gain = _u(rng, spec.gain_db)
    jump_at = int(rng.integers(0, len(clip)))
    jump = _u(rng, spec.jump_db)

    if draws[0] < spec.pitch_p:
        clip = dsp.pitch_shift(clip, pitch)
    if draws[1] < spec.shift_p:
        clip = dsp.time_shift(clip, shift)
    if draws[2] < spec.eq_p:
        clip = dsp.apply_eq(clip, eq)
    if draws[3] < spec.reverb_p:
        ir = dsp.exp_decay_impulse(rng_for(ir_seed), clip.sample_rate, rt60)
        clip = dsp.apply_reverb(clip, ir)
    if draws[4] < spec.distort_p:
        clip = dsp.distort(clip, drive)
    if draws[5] < spec.gain_p:
        clip = dsp.gain_db(clip, gain)
    if draws[6] < spec.jump_p:
        clip = dsp.level_jump(clip, jump_at, jump)
    return clip


def apply_mic_chain(clip: AudioClip, spec: MicDegradeSpec,
                    rng: np.random.Generator) -> AudioClip:
    draws = rng.random(4)
    lo = _u(rng, spec.bandpass_lo_hz)
    hi = _u(rng, spec.bandpass_hi_hz)
    bands = [(int(b), int(b) + int(w)) for b, w in zip(
        rng.integers(0, 220, spec.mask_bands),
        rng.integers(spec.mask_band_bins[0], spec.mask_band_bins[1] + 1, spec.mask_bands))]
    spans = [(int(s), int(s) + int(w)) for s, w in zip(
        rng.integers(0, max(1, len(clip) // 128 - 12), spec.mask_spans),
        rng.integers(spec.mask_span_frames[0], spec.mask_span_frames[1] + 1, spec.mask_spans))]
    bits = int(rng.integers(spec.codec_bits[0], spec.codec_bits[1] + 1))
    cutoff = _u(rng, spec.codec_cutoff_hz)
    snr = _u(rng, spec.noise_snr_db)
    noise = rng.standard_normal(len(clip))

    if draws[0] < spec.bandpass_p:
        clip = dsp.bandpass(clip, lo, max(hi, lo + 100.0))
    if draws[1] < spec.mask_p:
        clip = dsp.spectral_mask(clip, bands, spans)
    if draws[2] < spec.codec_p:
        clip = dsp.codec_sim(clip, bits, cutoff)
    if draws[3] < spec.noise_p:
        sig_rms = 10.0 ** (dsp.rms_dbfs(clip.samples) / 20.0)
        scale = sig_rms * 10.0 ** (-snr / 20.0)
        clip = AudioClip(clip.samples + (noise * scale).astype(np.float32),
                         clip.sample_rate)
    return clip


def crop_or_tile(samples: np.ndarray, num: int, rng: np.random.Generator) -> np.ndarray:
    """Random crop; shorter inputs are tiled first. Always consumes one draw."""
    x = np.asarray(samples)
    if len(x) < num:
        x = np.tile(x, -(-num // len(x)))
    offset = int(rng.integers(0, len(x) - num + 1))
    return x[offset:offset + num].copy()


def mix_pair(sources, duration_samples: int, src_spec: SourceAugSpec,
             mic_spec: MicDegradeSpec, content_rng: np.random.Generator,
             view_rngs, clean_anchor: bool = False) -> list[AudioClip]:
    """Two views of the same mix: shared crops/levels, independent effects.

    sources is a list of AudioClips; all must share a sample rate. Returns
    one AudioClip per view generator (normally two). With clean_anchor the
    first view skips both effect chains and carries only the shared
    crop/level stage.
    """
    rates = {s.sample_rate for s in sources}
    if len(rates) != 1:
        raise ValueError(f"mix_pair: sources disagree on sample rate: {sorted(rates)}")
    sr = rates.pop()

    segments = []
    for src in sources:
        seg = crop_or_tile(src.samples, duration_samples, content_rng)
        loud_gate = content_rng.random()
        target = _u(content_rng, src_spec.loudness_dbfs)
        if loud_gate < src_spec.loudness_p:
            seg = dsp.normalize_rms(AudioClip(seg, sr), target).samples
        segments.append(seg)

    views = []
    for v, vrng in enumerate(view_rngs):
        plain = clean_anchor and v == 0
        total = np.zeros(duration_samples, dtype=np.float64)
        for seg in segments:
            out = AudioClip(seg.copy(), sr) if plain else \
                apply_source_chain(AudioClip(seg.copy(), sr), src_spec, vrng)
            total += out.samples.astype(np.float64)
        mixed = AudioClip(dsp.soft_clip(total.astype(np.float32)), sr)
        views.append(mixed if plain else apply_mic_chain(mixed, mic_spec, vrng))
    return views


@dataclass
class Batch:
    """Training batch: rows 0..P-1 are view A, rows P..2P-1 are view B."""

    audio: np.ndarray                 # (2P, T) float32
    teacher_keys: list                # len 2P, None when the mix is polyphonic
    pair_count: int


def build_batch(entries, pairs: int, duration_samples: int, sample_rate: int,
                src_spec: SourceAugSpec, mic_spec: MicDegradeSpec,
                seed: int, step: int, n_max: int = 1, loader=None,
                clean_anchor: bool = False) -> Batch:
    """Assemble P positive pairs from manifest entries.

    entries: list of (relative_path, label, AudioClip) or whatever loader
    resolves; pairs draw disjoint source sets while enough entries remain.
    Mixes of a single source carry that source's relative path as teacher
    key; polyphonic mixes carry None. With clean_anchor the A views skip
    the effect chains and teacher keys attach to them alone, so teacher
    rows train on the same un-effected inputs later probes embed.
    """
    if loader is None:
        loader = lambda e: e[2]
    batch_rng = rng_for(seed, step)
    counts = [int(batch_rng.integers(1, n_max + 1)) for _ in range(pairs)]
    perm = list(batch_rng.permutation(len(entries)))
    cursor = 0
    views_a, views_b, keys = [], [], []
    for j in range(pairs):
        n = counts[j]
        if cursor + n > len(perm):  # ran out: reshuffle the remainder pool
            perm = list(batch_rng.permutation(len(entries)))
            cursor = 0
        picks = [entries[perm[cursor + i]] for i in range(n)]
        cursor += n
        sources = [loader(e) for e in picks]
        a, b = mix_pair(sources, duration_samples, src_spec, mic_spec,
                        rng_for(seed, step, j, 0),
                        [rng_for(seed, step, j, 1), rng_for(seed, step, j, 2)],
                        clean_anchor=clean_anchor)
        views_a.append(a.samples)
        views_b.append(b.samples)
        keys.append(picks[0][0] if n == 1 else None)
    audio = np.stack(views_a + views_b).astype(np.float32)
    keys_b = [None] * pairs if clean_anchor else keys
    return Batch(audio=audio, teacher_keys=keys + keys_b, pair_count=pairs)
