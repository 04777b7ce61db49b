"""Training objectives: multi-resolution spectral L1, least-squares GAN,
feature matching, KL with cyclical annealing, pair-contrastive, teacher
cosine distillation."""

from __future__ import annotations

import warnings

import numpy as np

from . import spectral
from . import tensor as T
from .tensor import Tensor

MRSTFT_WINDOWS = (2039, 1021, 503, 257, 127, 61, 31)


def mrstft_loss(audio_hat: Tensor, audio_ref: np.ndarray,
                windows=MRSTFT_WINDOWS) -> Tensor:
    """Mean L1 between compressed spectra at several resolutions.

    Resolutions whose window exceeds the signal are skipped with a warning;
    hop is window/4 (rounded down for the prime windows).
    """
    num_samples = audio_hat.shape[-1]
    ref = Tensor(np.asarray(audio_ref, dtype=np.float32))
    total = None
    used = 0
    for win in windows:
        if num_samples <= win // 2:
            warnings.warn(f"mrstft: skipping window {win} for {num_samples}-sample signal")
            continue
        hop = win // 4
        s_hat = spectral.compressed_stft_t(audio_hat, win, hop)
        with T.no_grad():
            s_ref = spectral.compressed_stft_t(ref, win, hop)
        total_w = T.mean(T.abs_(T.sub(s_hat, Tensor(s_ref.data))))
        total = total_w if total is None else T.add(total, total_w)
        used += 1
    if total is None:
        raise ValueError(f"mrstft: no resolution fits a {num_samples}-sample signal")
    return T.div(total, Tensor(float(used), dtype=total.dtype))


def kld_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean over all latent elements of 0.5 (mu^2 + e^L - 1 - L)."""
    half = Tensor(0.5, dtype=mu.dtype)
    inner = T.sub(T.add(T.square(mu), T.exp(logvar)),
                  T.add(Tensor(1.0, dtype=mu.dtype), logvar))
    return T.mean(T.mul(half, inner))


def kl_weight(step: int, period: int, ramp_frac: float, peak: float) -> float:
    """Cyclical cosine ramp: 0 -> peak over the first ramp_frac of each cycle."""
    t = step % period
    ramp = ramp_frac * period
    if t < ramp:
        return peak * 0.5 * (1.0 - np.cos(np.pi * t / ramp))
    return peak


def ntxent_loss(proj: Tensor, temperature: float = 1.0) -> Tensor:
    """Normalized-temperature cross entropy over 2P stacked projections.

    Row i of the first half pairs with row i of the second half. The
    denominator runs over every other row (both views, positives included).
    """
    n = proj.shape[0]
    if n % 2 or n < 4:
        raise ValueError(f"ntxent: need an even batch of at least 4 projections, got {n}")
    p = n // 2
    normed = T.l2_normalize(proj, axis=-1)
    sims = T.div(T.matmul(normed, T.transpose(normed)),
                 Tensor(temperature, dtype=proj.dtype))
    off_diag = (1.0 - np.eye(n)).astype(np.float32)
    pos = np.zeros((n, n), dtype=np.float32)
    pos[np.arange(p), np.arange(p) + p] = 1.0
    pos[np.arange(p) + p, np.arange(p)] = 1.0
    denom = T.sum_(T.mul(T.exp(sims), Tensor(off_diag)), axis=1)
    pos_sim = T.sum_(T.mul(sims, Tensor(pos)), axis=1)
    return T.mean(T.sub(T.log(denom), pos_sim))


def masked_teacher_loss(student: Tensor, teacher: np.ndarray,
                        valid: np.ndarray) -> Tensor | None:
    """Mean (2 - cos) between unit-norm student rows and teacher embeddings.

    Rows with valid == 0 (no teacher record) are excluded; returns None when
    nothing in the batch has a teacher.
    """
    w = np.asarray(valid, dtype=np.float32)
    count = float(w.sum())
    if count == 0.0:
        return None
    t = np.asarray(teacher, dtype=np.float64)
    t = t / np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-12)
    cos = T.sum_(T.mul(student, Tensor(t.astype(np.float32))), axis=1)
    two_minus = T.sub(Tensor(2.0, dtype=cos.dtype), cos)
    weighted = T.sum_(T.mul(two_minus, Tensor(w)))
    return T.div(weighted, Tensor(count, dtype=weighted.dtype))


# -- least-squares GAN ------------------------------------------------------------


def _mean_over(parts) -> Tensor:
    total = parts[0]
    for p in parts[1:]:
        total = T.add(total, p)
    return T.div(total, Tensor(float(len(parts)), dtype=total.dtype))


def lsgan_disc_loss(real_logits, fake_logits) -> Tensor:
    """Mean over discriminators of E[(D(x)-1)^2] + E[D(x_hat)^2]."""
    if len(real_logits) != len(fake_logits) or not real_logits:
        raise ValueError("lsgan_disc_loss: mismatched or empty logit lists")
    parts = []
    for r, f in zip(real_logits, fake_logits):
        one = Tensor(1.0, dtype=r.dtype)
        parts.append(T.add(T.mean(T.square(T.sub(r, one))), T.mean(T.square(f))))
    return _mean_over(parts)


def lsgan_gen_loss(fake_logits) -> Tensor:
    """Mean over discriminators of E[(D(x_hat)-1)^2]."""
    if not fake_logits:
        raise ValueError("lsgan_gen_loss: empty logit list")
    parts = []
    for f in fake_logits:
        one = Tensor(1.0, dtype=f.dtype)
        parts.append(T.mean(T.square(T.sub(f, one))))
    return _mean_over(parts)


def feature_matching_loss(fake_feats, real_feats, eps: float = 1e-6) -> Tensor:
    """Scale-normalized L1 between discriminator features, real side fixed.

    fake_feats: list (per disc) of lists (per layer) of Tensors;
    real_feats: matching numpy arrays (already detached).
    """
    parts = []
    for d_fake, d_real in zip(fake_feats, real_feats):
        for f, r in zip(d_fake, d_real):
            scale = 1.0 / (float(np.mean(np.abs(r))) + eps)
            diff = T.mean(T.abs_(T.sub(f, Tensor(np.asarray(r, dtype=np.float32)))))
            parts.append(T.mul(diff, Tensor(scale, dtype=diff.dtype)))
    if not parts:
        raise ValueError("feature_matching_loss: no features")
    return _mean_over(parts)
