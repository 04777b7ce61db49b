"""Multi-resolution sub-band spectrogram discriminator bank.

Three STFT resolutions at 50% overlap; at each one a full-band critic plus
five band-sliced critics covering [0, .1, .25, .5, .75, 1] of the bins,
18 in total. Each critic is six 3x3 conv layers at 32 channels with leaky
ReLU (no normalization) and a 1x1 logit head. Strides are (2, 2) but drop
to 1 on any axis whose current extent is under 3.
"""

from __future__ import annotations

import numpy as np

from . import nn, spectral
from . import tensor as T
from .tensor import Tensor

RESOLUTIONS = (1024, 256, 128)
BAND_EDGES = (0.0, 0.1, 0.25, 0.5, 0.75, 1.0)
LEAKY_SLOPE = 0.2


def band_rows(num_bins: int):
    """[lo, hi) bin rows of the five band slices; they tile [0, num_bins)."""
    edges = [int(np.floor(frac * num_bins)) for frac in BAND_EDGES]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


class SpecCritic(nn.Module):
    """Six-layer conv stack on a (B, 2, F, M) compressed spectrum slice."""

    NUM_LAYERS = 6
    CHANNELS = 32

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        layers = []
        c_in = 2
        for _ in range(self.NUM_LAYERS):
            layers.append(nn.Conv2d(c_in, self.CHANNELS, (3, 3), rng,
                                    padding=((1, 1), (1, 1))))
            c_in = self.CHANNELS
        self.layers = nn.ModuleList(layers)
        self.head = nn.Conv2d(self.CHANNELS, 1, (1, 1), rng)

    def forward(self, x: Tensor):
        feats = []
        h = x
        for layer in self.layers:
            stride = (2 if h.shape[2] >= 3 else 1, 2 if h.shape[3] >= 3 else 1)
            h = T.conv2d(h, layer.weight, layer.bias, stride=stride,
                         padding=layer.padding)
            h = T.leaky_relu(h, LEAKY_SLOPE)
            feats.append(h)
        return self.head(h), feats


class DiscriminatorBank(nn.Module):
    """18 critics over 3 resolutions x (full band + 5 slices)."""

    def __init__(self, seed: int = 0, resolutions=RESOLUTIONS):
        super().__init__()
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD15C)))
        self.resolutions = tuple(resolutions)
        critics = []
        self.slices = []  # aligned with critics: (resolution index, lo, hi)
        for ri, win in enumerate(self.resolutions):
            bins = win // 2 + 1
            critics.append(SpecCritic(rng))
            self.slices.append((ri, 0, bins))
            for lo, hi in band_rows(bins):
                critics.append(SpecCritic(rng))
                self.slices.append((ri, lo, hi))
        self.critics = nn.ModuleList(critics)

    def __len__(self):
        return len(self.critics)

    def forward(self, audio: Tensor):
        """Returns (logits list, features list-of-lists), one entry per critic."""
        specs = []
        for win in self.resolutions:
            s = spectral.compressed_stft_t(audio, win, win // 2)
            specs.append(T.transpose(s, (0, 3, 2, 1)))  # (B, 2, F, M)
        logits, feats = [], []
        for critic, (ri, lo, hi) in zip(self.critics, self.slices):
            out, f = critic(specs[ri][:, :, lo:hi, :])
            logits.append(out)
            feats.append(f)
        return logits, feats
