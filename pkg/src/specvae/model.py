"""Frequency-domain VAE over power-law compressed STFTs.

Input is a (2, 256, M) re/im spectrogram (Nyquist row dropped, win 512
hop 256). Eight inverted-bottleneck blocks halve frequency every block and
halve time at three of them, so a latent frame summarizes 8 STFT hops
(128 ms at 16 kHz). The decoder mirrors the encoder with nearest-neighbor
upsampling and causal time convolutions, emitting a compressed spectrum
that inverts back to audio through the differentiable iSTFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp, nn, spectral
from . import tensor as T
from .tensor import Tensor

LOGVAR_LO = -30.0
LOGVAR_HI = 10.0


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple = (64, 128, 128, 256, 256, 512, 512, 512)
    latent_dim: int = 128
    win: int = 512
    hop: int = 256
    sample_rate: int = 16000
    time_stride_blocks: tuple = (4, 5, 6)  # 1-indexed blocks that halve time
    time_dilations: tuple = (1, 1, 2, 4, 8, 4, 4, 2)
    freq_kernel: int = 3
    enc_time_kernel: int = 5
    dec_time_kernel: int = 2
    teacher_dim: int = 1024

    @property
    def num_bins(self) -> int:
        return self.win // 2  # Nyquist row dropped at the model boundary

    @property
    def time_factor(self) -> int:
        return 2 ** len(self.time_stride_blocks)

    @property
    def latent_hz(self) -> float:
        return self.sample_rate / (self.hop * self.time_factor)


LARGE_CHANNELS = (64, 128, 256, 512, 512, 1024, 1024, 2048)
TINY_CHANNELS = (4, 4, 8, 8, 8, 8, 16, 16)

PRESETS = {
    "tiny": ModelConfig(channels=TINY_CHANNELS, latent_dim=8),
    "small64": ModelConfig(latent_dim=64),
    "small128": ModelConfig(latent_dim=128),
    "large128": ModelConfig(channels=LARGE_CHANNELS, latent_dim=128),
}


def _hidden(c_in: int, c_out: int) -> int:
    return 2 * max(c_in, c_out)


class EncoderBlock(nn.Module):
    """Inverted bottleneck: 1x1 expand, centered depthwise (strided,
    time-dilated), instance norm, 1x1 project, strided-slice skip."""

    def __init__(self, c_in: int, c_out: int, t_stride: int, t_dil: int,
                 cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        h = _hidden(c_in, c_out)
        kf, kt = cfg.freq_kernel, cfg.enc_time_kernel
        self.t_stride = t_stride
        self.pw1 = nn.Conv2d(c_in, h, (1, 1), rng)
        self.act1 = nn.SnakeBeta(h)
        self.dw = nn.Conv2d(h, h, (kf, kt), rng, stride=(2, t_stride),
                            dilation=(1, t_dil),
                            padding=((kf // 2, kf // 2),
                                     ((kt // 2) * t_dil, (kt // 2) * t_dil)),
                            groups=h)
        self.norm = nn.InstanceNorm2d(h)
        self.act2 = nn.SnakeBeta(h)
        self.pw2 = nn.Conv2d(h, c_out, (1, 1), rng)
        self.skip = nn.Conv2d(c_in, c_out, (1, 1), rng) if c_in != c_out else None

    def forward(self, x: Tensor) -> Tensor:
        h = self.pw2(self.act2(self.norm(self.dw(self.act1(self.pw1(x))))))
        s = x[:, :, ::2, ::self.t_stride] if self.t_stride > 1 else x[:, :, ::2, :]
        if self.skip is not None:
            s = self.skip(s)
        return T.add(h, s)


class DecoderBlock(nn.Module):
    """Mirror block: 1x1 expand, nearest upsample, causal depthwise,
    instance norm, 1x1 project, upsampled skip."""

    def __init__(self, c_in: int, c_out: int, t_up: bool,
                 cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        h = _hidden(c_in, c_out)
        kf, kt = cfg.freq_kernel, cfg.dec_time_kernel
        self.up_axes = (2, 3) if t_up else (2,)
        self.pw1 = nn.Conv2d(c_in, h, (1, 1), rng)
        self.act1 = nn.SnakeBeta(h)
        self.dw = nn.Conv2d(h, h, (kf, kt), rng,
                            padding=((kf // 2, kf // 2), (kt - 1, 0)),  # causal time
                            groups=h)
        self.norm = nn.InstanceNorm2d(h)
        self.act2 = nn.SnakeBeta(h)
        self.pw2 = nn.Conv2d(h, c_out, (1, 1), rng)
        self.skip = nn.Conv2d(c_in, c_out, (1, 1), rng) if c_in != c_out else None

    def forward(self, x: Tensor) -> Tensor:
        h = T.nearest_upsample2(self.act1(self.pw1(x)), self.up_axes)
        h = self.pw2(self.act2(self.norm(self.dw(h))))
        s = T.nearest_upsample2(x, self.up_axes)
        if self.skip is not None:
            s = self.skip(s)
        return T.add(h, s)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        blocks = []
        c_prev = 2
        for i, c in enumerate(cfg.channels):
            t_stride = 2 if (i + 1) in cfg.time_stride_blocks else 1
            blocks.append(EncoderBlock(c_prev, c, t_stride, cfg.time_dilations[i], cfg, rng))
            c_prev = c
        self.blocks = nn.ModuleList(blocks)
        self.bottleneck = nn.Conv2d(c_prev, 2 * cfg.latent_dim, (1, 1), rng)

    def forward(self, x: Tensor):
        h = x
        for blk in self.blocks:
            h = blk(h)
        b = self.bottleneck(h)
        d = self.cfg.latent_dim
        mu = b[:, :d]
        logvar = T.clip(b[:, d:], LOGVAR_LO, LOGVAR_HI)
        return mu, logvar


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        rev = cfg.channels[::-1]
        outs = rev[1:] + (rev[-1],)
        self.inconv = nn.Conv2d(cfg.latent_dim, rev[0], (1, 1), rng)
        n = len(rev)
        up_blocks = tuple(n + 1 - b for b in cfg.time_stride_blocks)  # mirror positions
        blocks = []
        for j in range(n):
            blocks.append(DecoderBlock(rev[j], outs[j], (j + 1) in up_blocks, cfg, rng))
        self.blocks = nn.ModuleList(blocks)
        self.outconv = nn.Conv2d(outs[-1], 2, (1, 1), rng)

    def forward(self, z: Tensor) -> Tensor:
        h = self.inconv(z)
        for blk in self.blocks:
            h = blk(h)
        return self.outconv(h)


class ContrastHead(nn.Module):
    """Time-pooled latent -> projection space for the pair loss."""

    def __init__(self, d: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = nn.Linear(d, 4 * d, rng)
        self.act = nn.SnakeBeta1d(4 * d)
        self.fc2 = nn.Linear(4 * d, 4 * d, rng)

    def forward(self, pooled: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(pooled)))


class TeacherHead(nn.Module):
    """Time-pooled latent -> unit-norm embedding matching the teacher space."""

    def __init__(self, d: int, teacher_dim: int, rng: np.random.Generator):
        super().__init__()
        self.fc = nn.Linear(d, teacher_dim, rng)

    def forward(self, pooled: Tensor) -> Tensor:
        return T.l2_normalize(self.fc(pooled), axis=-1)


class FreqVAE(nn.Module):
    """Encoder/decoder pair plus the two latent projection heads."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0DEC)))
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.contrast_head = ContrastHead(cfg.latent_dim, rng)
        self.teacher_head = TeacherHead(cfg.latent_dim, cfg.teacher_dim, rng)

    # -- spectrum/audio boundary ------------------------------------------

    def input_spec(self, audio: np.ndarray):
        """(B, T) float audio -> ((B, 2, bins, Mpad) float32, frames M).

        Compressed STFT with the Nyquist row dropped and frames zero-padded
        to a multiple of the time factor.
        """
        if audio.ndim != 2:
            raise ValueError(f"input_spec wants (batch, samples), got {audio.shape}")
        cfg = self.cfg
        x = audio.astype(np.float64)
        idx = dsp.frame_indices(x.shape[1], cfg.win, cfg.hop)
        frames = x[:, idx] * dsp.hann_periodic(cfg.win)[None, None, :]
        spec = np.fft.rfft(frames, axis=-1)          # (B, M, F)
        spec = dsp.powerlaw_compress(spec)
        spec = spec[:, :, :cfg.num_bins].transpose(0, 2, 1)  # drop Nyquist -> (B, bins, M)
        m = spec.shape[2]
        tf = self.cfg.time_factor
        pad = (-m) % tf
        packed = np.stack([spec.real, spec.imag], axis=1).astype(np.float32)
        if pad:
            packed = np.pad(packed, ((0, 0), (0, 0), (0, 0), (0, pad)))
        return packed, m

    def output_audio(self, spec_hat: Tensor, m: int, num_samples: int) -> Tensor:
        """Decoder output (B, 2, bins, Mpad) -> (B, T) waveform, differentiable."""
        cropped = spec_hat[:, :, :, :m]
        packed = T.transpose(cropped, (0, 3, 2, 1))          # (B, M, bins, 2)
        expanded = spectral.powerlaw_expand_t(packed)
        b, _, _, _ = expanded.shape
        nyq = Tensor(np.zeros((b, m, 1, 2), dtype=np.float32))
        full = T.concat([expanded, nyq], axis=2)             # restore Nyquist row
        return spectral.istft_tensor(full, self.cfg.win, self.cfg.hop, num_samples)

    # -- core passes --------------------------------------------------------

    def encode(self, spec: Tensor):
        return self.encoder(spec)

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)

    @staticmethod
    def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
        std = T.exp(T.mul(logvar, Tensor(0.5, dtype=logvar.dtype)))
        return T.add(mu, T.mul(std, Tensor(eps.astype(np.float32))))

    @staticmethod
    def pool_time(mu: Tensor) -> Tensor:
        """(B, D, 1, Mz) -> (B, D) mean over latent frames."""
        return T.mean(mu, axis=(2, 3))

    def forward(self, audio: np.ndarray, eps: np.ndarray) -> dict:
        spec, m = self.input_spec(audio)
        mu, logvar = self.encode(Tensor(spec))
        z = self.reparameterize(mu, logvar, eps)
        spec_hat = self.decode(z)
        audio_hat = self.output_audio(spec_hat, m, audio.shape[1])
        return {"mu": mu, "logvar": logvar, "z": z,
                "spec_hat": spec_hat, "audio_hat": audio_hat, "frames": m}

    def encode_mu(self, audio: np.ndarray, clip_stats: bool = True) -> np.ndarray:
        """(B, T) -> (B, D, Mz) posterior means, no graph.

        clip_stats normalizes with each clip's own statistics, the same map
        the projection heads see during training; False applies the frozen
        running statistics (the time-local codec path). Either way the rows
        are batch independent and the running buffers come back untouched.
        """
        was_training = self.training
        saved = [(b, b.copy()) for _, b in self.named_buffers()] if clip_stats else None
        self.train(clip_stats)
        spec, _ = self.input_spec(audio)
        with T.no_grad():
            mu, _ = self.encode(Tensor(spec))
        if saved is not None:
            for buf, copy in saved:
                buf[...] = copy
        self.train(was_training)
        return mu.data[:, :, 0, :]

    def noise_shape(self, num_samples: int):
        m = dsp.frame_count(num_samples, self.cfg.hop)
        mz = -(-m // self.cfg.time_factor)
        return (self.cfg.latent_dim, 1, mz)

    # -- receptive field ------------------------------------------------------

    def analytic_receptive_field(self) -> dict:
        """Closed-form encoder span: frames = 1 + sum (k-1) * dilation * jump."""
        cfg = self.cfg
        jump = 1
        frames = 1
        for i in range(len(cfg.channels)):
            frames += (cfg.enc_time_kernel - 1) * cfg.time_dilations[i] * jump
            if (i + 1) in cfg.time_stride_blocks:
                jump *= 2
        return {"frames": frames,
                "seconds": frames * cfg.hop / cfg.sample_rate}

    def probe_receptive_field(self, seed: int = 0) -> int:
        """Measured span: gradient support of one latent frame over input frames.

        Runs in eval mode (running-stat normalization) in float64 so the
        support is a structural property of the convolution stack.
        """
        cfg = self.cfg
        analytic = self.analytic_receptive_field()["frames"]
        mz = 2 * (-(-analytic // cfg.time_factor) // 2) + 9
        m = mz * cfg.time_factor
        rng = np.random.default_rng(seed)
        was_training = self.training
        self.eval()
        x = Tensor(rng.standard_normal((1, 2, cfg.num_bins, m)), requires_grad=True)
        mu, _ = self.encode(x)
        j0 = mu.shape[3] // 2
        T.sum_(mu[:, :, :, j0]).backward()
        self.train(was_training)
        support = np.abs(x.grad).sum(axis=(0, 1, 2)) > 0
        cols = np.nonzero(support)[0]
        return int(cols[-1] - cols[0] + 1)

    def probe_decoder_causality(self, seed: int = 0) -> bool:
        """No output frame may depend on latent frames after its own window."""
        cfg = self.cfg
        mz = 12
        rng = np.random.default_rng(seed)
        was_training = self.training
        self.eval()
        z = Tensor(rng.standard_normal((1, cfg.latent_dim, 1, mz)), requires_grad=True)
        spec = self.decode(z)
        t0 = (mz // 2) * cfg.time_factor + cfg.time_factor - 1  # last col of the window
        T.sum_(spec[:, :, :, t0]).backward()
        self.train(was_training)
        support = np.nonzero(np.abs(z.grad).sum(axis=(0, 1, 2)) > 0)[0]
        return len(support) > 0 and support[-1] <= t0 // cfg.time_factor


def count_parameters(model: nn.Module) -> int:
    return model.num_parameters()
