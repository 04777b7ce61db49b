"""Differentiable STFT pipeline on engine tensors.

Mirrors the numpy geometry in dsp.py exactly (same frame indices, window
and overlap-add normalization) so values agree between the two routes to
float precision. Spectra are packed (..., frames, bins, 2) with the real
and imaginary parts in the trailing axis.
"""

from __future__ import annotations

import numpy as np

from . import dsp
from . import tensor as T
from .tensor import Tensor

POWERLAW_EPS = 1e-12


def stft_tensor(x: Tensor, win: int, hop: int) -> Tensor:
    """(B, T) -> (B, M, F, 2) differentiable STFT."""
    n = x.shape[-1]
    idx = dsp.frame_indices(n, win, hop)
    window = Tensor(dsp.hann_periodic(win).astype(np.float32))
    frames = T.mul(T.take_last(x, idx), window)
    return T.rfft_packed(frames)


def istft_tensor(spec: Tensor, win: int, hop: int, num_samples: int) -> Tensor:
    """(B, M, F, 2) -> (B, num_samples) weighted overlap-add inverse."""
    m = spec.shape[1]
    if m != dsp.frame_count(num_samples, hop):
        raise ValueError(f"istft_tensor: {m} frames cannot reconstruct "
                         f"{num_samples} samples at hop {hop}")
    window = Tensor(dsp.hann_periodic(win).astype(np.float32))
    frames = T.mul(T.irfft_packed(spec, n=win), window)
    padded = num_samples + 2 * (win // 2)
    den = Tensor(dsp.ola_denominator(num_samples, win, hop).astype(np.float32))
    out = T.div(T.overlap_add(frames, hop, padded), den)
    lo = win // 2
    return out[:, lo:lo + num_samples]


def powerlaw_compress_t(spec: Tensor, p: float = dsp.POWERLAW_P,
                        eps: float = POWERLAW_EPS) -> Tensor:
    """Packed-spectrum power-law compression, smooth at zero magnitude."""
    mag2 = T.sum_(T.square(spec), axis=-1, keepdims=True)
    scale = T.pow_const(T.add(mag2, Tensor(eps * eps, dtype=spec.dtype)), (p - 1.0) / 2.0)
    return T.mul(spec, scale)


def powerlaw_expand_t(spec: Tensor, p: float = dsp.POWERLAW_P,
                      eps: float = POWERLAW_EPS) -> Tensor:
    mag2 = T.sum_(T.square(spec), axis=-1, keepdims=True)
    scale = T.pow_const(T.add(mag2, Tensor(eps * eps, dtype=spec.dtype)), (1.0 / p - 1.0) / 2.0)
    return T.mul(spec, scale)


def compressed_stft_t(x: Tensor, win: int, hop: int, p: float = dsp.POWERLAW_P) -> Tensor:
    return powerlaw_compress_t(stft_tensor(x, win, hop), p)
