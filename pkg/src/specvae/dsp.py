"""Signal toolbox: STFT/iSTFT, power-law compression, WAV I/O, effect primitives.

Everything here is plain numpy (no autodiff) and computes in float64
internally. The STFT geometry helpers are shared with the differentiable
spectral path so both routes frame identically: centered frames every hop
samples with half-window reflect padding, M = ceil(T / hop) frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

POWERLAW_P = 0.3


@dataclass
class AudioClip:
    """Mono float32 samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError(f"AudioClip wants mono 1D samples, got shape {self.samples.shape}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass
class ComplexSpec:
    """Complex STFT, bins x frames, with the geometry that produced it."""

    data: np.ndarray  # complex128, (F, M)
    sample_rate: int
    win: int
    hop: int

    @property
    def num_bins(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]


def load_wav(path) -> AudioClip:
    """Read PCM16 or float32 WAV; multichannel is downmixed by averaging."""
    sr, data = wavfile.read(path)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float32)
    else:
        raise ValueError(f"{path}: unsupported WAV dtype {data.dtype}")
    return AudioClip(data, int(sr))


def save_wav(path, clip: AudioClip, pcm16: bool = False):
    if pcm16:
        scaled = np.round(clip.samples.astype(np.float64) * 32768.0)
        data = np.clip(scaled, -32768, 32767).astype(np.int16)
        wavfile.write(path, clip.sample_rate, data)
    else:
        wavfile.write(path, clip.sample_rate, clip.samples.astype(np.float32))


# -- STFT geometry --------------------------------------------------------------


def hann_periodic(win: int) -> np.ndarray:
    n = np.arange(win)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / win))


def _check_cola(win: int, hop: int):
    if hop not in (win // 2, win // 4):
        raise ValueError(f"hop {hop} must be win/2 or win/4 of window {win} "
                         "for exact overlap-add inversion")


def frame_count(num_samples: int, hop: int) -> int:
    return -(-num_samples // hop)


def frame_indices(num_samples: int, win: int, hop: int) -> np.ndarray:
    """(M, win) gather indices implementing centered frames with reflect padding."""
    pad = win // 2
    if num_samples <= pad:
        raise ValueError(f"signal of {num_samples} samples is too short for window {win}")
    reflected = np.pad(np.arange(num_samples), pad, mode="reflect")
    m = frame_count(num_samples, hop)
    starts = np.arange(m)[:, None] * hop
    return reflected[starts + np.arange(win)[None, :]]


def stft(x: np.ndarray, sample_rate: int, win: int, hop: int) -> ComplexSpec:
    """Complex STFT (float64 path), F = win/2 + 1 bins, M = ceil(T/hop) frames."""
    _check_cola(win, hop)
    x = np.asarray(x, dtype=np.float64)
    frames = x[frame_indices(len(x), win, hop)] * hann_periodic(win)[None, :]
    spec = np.fft.rfft(frames, axis=-1).T  # (F, M)
    return ComplexSpec(spec, sample_rate, win, hop)


def istft(spec: ComplexSpec, num_samples: int) -> np.ndarray:
    """Weighted overlap-add inverse, exact for unmodified spectra."""
    _check_cola(spec.win, spec.hop)
    m = spec.num_frames
    if m != frame_count(num_samples, spec.hop):
        raise ValueError(f"{m} frames cannot reconstruct {num_samples} samples "
                         f"at hop {spec.hop}")
    win, hop = spec.win, spec.hop
    w = hann_periodic(win)
    frames = np.fft.irfft(spec.data.T, n=win, axis=-1) * w[None, :]
    padded_len = num_samples + 2 * (win // 2)
    out = np.zeros(padded_len)
    den = np.zeros(padded_len)
    for i in range(m):
        out[i * hop:i * hop + win] += frames[i]
        den[i * hop:i * hop + win] += w * w
    lo = win // 2
    den = den[lo:lo + num_samples]
    return out[lo:lo + num_samples] / np.where(den > 1e-11, den, 1.0)


def ola_denominator(num_samples: int, win: int, hop: int) -> np.ndarray:
    """Sum of squared windows over the padded support (shared with the autodiff path)."""
    m = frame_count(num_samples, hop)
    w2 = hann_periodic(win) ** 2
    den = np.zeros(num_samples + 2 * (win // 2))
    for i in range(m):
        den[i * hop:i * hop + win] += w2
    return np.where(den > 1e-11, den, 1.0)


# -- power-law compression -------------------------------------------------------


def powerlaw_compress(z: np.ndarray, p: float = POWERLAW_P) -> np.ndarray:
    """|z|^p with phase kept: z * |z|^(p-1); zero stays zero."""
    mag = np.abs(z)
    safe = np.where(mag > 0, mag, 1.0)
    return z * np.where(mag > 0, safe ** (p - 1.0), 0.0)


def powerlaw_expand(z: np.ndarray, p: float = POWERLAW_P) -> np.ndarray:
    mag = np.abs(z)
    safe = np.where(mag > 0, mag, 1.0)
    return z * np.where(mag > 0, safe ** (1.0 / p - 1.0), 0.0)


def pack_reim(spec: np.ndarray) -> np.ndarray:
    """(F, M) complex -> (2, F, M) float32 [re, im] channels."""
    return np.stack([spec.real, spec.imag]).astype(np.float32)


def unpack_reim(packed: np.ndarray) -> np.ndarray:
    return packed[0].astype(np.float64) + 1j * packed[1].astype(np.float64)


# -- level and dynamics ----------------------------------------------------------


def rms_dbfs(x: np.ndarray) -> float:
    rms = float(np.sqrt(np.mean(np.asarray(x, dtype=np.float64) ** 2)))
    return -120.0 if rms < 1e-6 else 20.0 * np.log10(rms)


def gain_db(clip: AudioClip, db: float) -> AudioClip:
    return AudioClip(clip.samples * 10.0 ** (db / 20.0), clip.sample_rate)


def normalize_rms(clip: AudioClip, target_dbfs: float) -> AudioClip:
    return gain_db(clip, target_dbfs - rms_dbfs(clip.samples))


def level_jump(clip: AudioClip, at_sample: int, db: float) -> AudioClip:
    """Step gain change at a sample index (sudden loudness event)."""
    out = clip.samples.copy()
    out[at_sample:] *= 10.0 ** (db / 20.0)
    return AudioClip(out, clip.sample_rate)


def soft_clip(x: np.ndarray) -> np.ndarray:
    """Identity inside [-1, 1], smooth tanh saturation beyond, bounded by 2."""
    ax = np.abs(x)
    return np.where(ax <= 1.0, x, np.sign(x) * (1.0 + np.tanh(ax - 1.0))).astype(x.dtype)


def distort(clip: AudioClip, drive: float) -> AudioClip:
    """tanh waveshaper normalized to keep full-scale peaks at full scale."""
    y = np.tanh(drive * clip.samples.astype(np.float64)) / np.tanh(drive)
    return AudioClip(y, clip.sample_rate)


# -- spectral effects ------------------------------------------------------------


def apply_eq(clip: AudioClip, band_gains_db: np.ndarray, f_lo: float = 50.0) -> AudioClip:
    """Graphic EQ: gains at log-spaced centers from f_lo to Nyquist,
    linearly interpolated over log-frequency across the whole rfft grid."""
    gains = np.asarray(band_gains_db, dtype=np.float64)
    x = clip.samples.astype(np.float64)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), 1.0 / clip.sample_rate)
    centers = np.geomspace(f_lo, clip.sample_rate / 2.0, len(gains))
    logf = np.log(np.maximum(freqs, f_lo / 2.0))
    curve_db = np.interp(logf, np.log(centers), gains)
    spec *= 10.0 ** (curve_db / 20.0)
    return AudioClip(np.fft.irfft(spec, n=len(x)), clip.sample_rate)


def apply_reverb(clip: AudioClip, impulse: np.ndarray) -> AudioClip:
    """FIR convolution with an impulse response, cropped to the input length."""
    wet = fftconvolve(clip.samples.astype(np.float64), np.asarray(impulse, np.float64))
    return AudioClip(wet[:len(clip.samples)], clip.sample_rate)


def exp_decay_impulse(rng: np.random.Generator, sample_rate: int, rt60: float) -> np.ndarray:
    """Noise burst with exponential decay reaching -60 dB at rt60 seconds."""
    n = max(int(rt60 * sample_rate), 8)
    t = np.arange(n) / sample_rate
    ir = rng.standard_normal(n) * 10.0 ** (-3.0 * t / rt60)
    ir[0] = 1.0  # keep the direct path dominant
    return ir / np.sqrt(np.sum(ir ** 2))


def bandpass(clip: AudioClip, lo_hz: float, hi_hz: float) -> AudioClip:
    """Brick-wall band-pass: zero all rfft bins outside [lo_hz, hi_hz)."""
    x = clip.samples.astype(np.float64)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), 1.0 / clip.sample_rate)
    spec[(freqs < lo_hz) | (freqs >= hi_hz)] = 0.0
    return AudioClip(np.fft.irfft(spec, n=len(x)), clip.sample_rate)


def time_shift(clip: AudioClip, samples: int) -> AudioClip:
    return AudioClip(np.roll(clip.samples, samples), clip.sample_rate)


def spectral_mask(clip: AudioClip, freq_bands, time_spans, win: int = 512) -> AudioClip:
    """Zero rectangular spectrogram regions; bands as (lo, hi) bin rows,
    spans as (lo, hi) frame columns."""
    hop = win // 4
    spec = stft(clip.samples, clip.sample_rate, win, hop)
    for lo, hi in freq_bands:
        spec.data[lo:hi, :] = 0.0
    for lo, hi in time_spans:
        spec.data[:, lo:hi] = 0.0
    return AudioClip(istft(spec, len(clip.samples)), clip.sample_rate)


def codec_sim(clip: AudioClip, bits: int, cutoff_hz: float) -> AudioClip:
    """Cheap-codec artifact: bit-depth quantization plus band limiting."""
    levels = float(2 ** (bits - 1))
    q = np.round(np.clip(clip.samples, -1.0, 1.0) * levels) / levels
    return bandpass(AudioClip(q, clip.sample_rate), 0.0, cutoff_hz)


# -- pitch shifting ---------------------------------------------------------------


def _linear_resample(x: np.ndarray, factor: float) -> np.ndarray:
    """Resample by index scaling: output length len(x)/factor."""
    n_out = max(int(round(len(x) / factor)), 2)
    pos = np.arange(n_out) * factor
    return np.interp(pos, np.arange(len(x)), x)


def _phase_vocoder(spec: ComplexSpec, rate: float) -> ComplexSpec:
    """Time-stretch by 1/rate: resample frame positions, accumulate phase."""
    d = spec.data
    f, m = d.shape
    steps = np.arange(0.0, m - 1, rate)
    expected = 2.0 * np.pi * spec.hop * np.arange(f) / spec.win
    mag = np.abs(d)
    ang = np.angle(d)
    out = np.empty((f, len(steps)), dtype=np.complex128)
    phase = ang[:, 0].copy()
    for t, s in enumerate(steps):
        i = int(s)
        frac = s - i
        interp_mag = (1.0 - frac) * mag[:, i] + frac * mag[:, i + 1]
        out[:, t] = interp_mag * np.exp(1j * phase)
        dphi = ang[:, i + 1] - ang[:, i] - expected
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        phase += expected + dphi
    return ComplexSpec(out, spec.sample_rate, spec.win, spec.hop)


def pitch_shift(clip: AudioClip, semitones: float, win: int = 1024) -> AudioClip:
    """Shift pitch keeping duration: resample then phase-vocoder stretch back."""
    if abs(semitones) < 1e-9:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    factor = 2.0 ** (semitones / 12.0)
    n = len(clip.samples)
    fast = _linear_resample(clip.samples.astype(np.float64), factor)
    spec = stft(fast, clip.sample_rate, win, win // 4)
    stretched = _phase_vocoder(spec, rate=len(fast) / n)
    n_target = (stretched.num_frames - 1) * stretched.hop + 1
    y = istft(stretched, n_target)
    if len(y) < n:
        y = np.pad(y, (0, n - len(y)))
    return AudioClip(y[:n], clip.sample_rate)
