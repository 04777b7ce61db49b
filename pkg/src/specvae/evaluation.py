"""Latent-space and reconstruction evaluation: a small classifier probe over
time-averaged posterior means, zero-shot labeling against text anchors, and
scale-invariant SDR / spectral distance for waveforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, nn
from . import tensor as T
from .optim import AdamW
from .teacher import EmbeddingTable, TEXT_PREFIX
from .tensor import Tensor

SI_SDR_CAP = 100.0


# -- model-side embedding helpers ---------------------------------------------------


def pooled_mu(model, audio: np.ndarray) -> np.ndarray:
    """(B, T) audio -> (B, D) time-averaged posterior means.

    Uses per-clip normalization statistics so the embedding is the same
    map the projection heads were trained against.
    """
    return model.encode_mu(audio).mean(axis=2)


def project_contrast(model, audio: np.ndarray) -> np.ndarray:
    """(B, T) -> (B, P) pair-projection head outputs, no graph."""
    p = pooled_mu(model, audio)
    with T.no_grad():
        return model.contrast_head(Tensor(p)).data


def project_teacher(model, audio: np.ndarray) -> np.ndarray:
    """(B, T) -> (B, E) unit-norm teacher-space embeddings, no graph."""
    p = pooled_mu(model, audio)
    with T.no_grad():
        return model.teacher_head(Tensor(p)).data


# -- classifier probe ------------------------------------------------------------


@dataclass
class ProbeConfig:
    hidden: int = 128
    epochs: int = 200
    lr: float = 1e-2
    seed: int = 0
    train_frac: float = 0.5
    task: str = "single"     # "single" (softmax) or "multi" (per-class sigmoid)


class _ProbeNet(nn.Module):
    def __init__(self, dim: int, hidden: int, classes: int, rng):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden, rng)
        self.fc2 = nn.Linear(hidden, classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.leaky_relu(self.fc1(x), 0.01))


def _stratified_split(labels_idx: np.ndarray, classes: int, frac: float, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5B117)))
    train, test = [], []
    for c in range(classes):
        idx = np.nonzero(labels_idx == c)[0]
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(frac * len(idx)))
        if n_train == 0:
            raise ValueError(f"class {c} absent from the train split "
                             f"({len(idx)} items at train_frac {frac})")
        train.extend(idx[:n_train])
        test.extend(idx[n_train:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mean precision at each positive hit; ties resolved by lower index first."""
    order = np.argsort(-scores, kind="stable")
    hits = positives[order].astype(bool)
    if not hits.any():
        raise ValueError("average_precision: no positive items")
    ranks = np.nonzero(hits)[0] + 1
    found = np.arange(1, len(ranks) + 1)
    return float(np.mean(found / ranks))


def _train_probe(x: np.ndarray, y_onehot: np.ndarray, cfg: ProbeConfig) -> _ProbeNet:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x9B08E)))
    net = _ProbeNet(x.shape[1], cfg.hidden, y_onehot.shape[1], rng)
    opt = AdamW(net.named_parameters(), lr=cfg.lr)
    xt = Tensor(x.astype(np.float32))
    yt = Tensor(y_onehot.astype(np.float32))
    n = float(x.shape[0])
    for _ in range(cfg.epochs):
        net.zero_grad()
        logits = net(xt)
        if cfg.task == "single":
            # cross entropy, row max subtracted as a constant for stability
            shift = T.sub(logits, Tensor(logits.data.max(axis=1, keepdims=True)))
            denom = T.log(T.sum_(T.exp(shift), axis=1))
            picked = T.sum_(T.mul(shift, yt), axis=1)
            loss = T.mean(T.sub(denom, picked))
        else:
            z = T.clip(logits, -30.0, 30.0)
            softplus = T.log(T.add(T.exp(z), Tensor(1.0)))
            loss = T.div(T.sum_(T.sub(softplus, T.mul(z, yt))),
                         Tensor(n * y_onehot.shape[1]))
        loss.backward()
        opt.step()
    return net


def probe(latents: np.ndarray, labels, cfg: ProbeConfig | None = None) -> dict:
    """Train a one-hidden-layer classifier on a stratified split; report the
    held-out accuracy (single-label) and macro mAP.

    labels: list of class names for single-label, or an (N, C) 0/1 matrix for
    multi-label (stratified there by first positive class).
    """
    cfg = cfg or ProbeConfig()
    x = np.asarray(latents, dtype=np.float32)
    if cfg.task == "single":
        names = sorted(set(labels))
        if len(names) < 2:
            raise ValueError(f"probe needs at least 2 classes, got {names}")
        y_idx = np.array([names.index(l) for l in labels])
        y = np.eye(len(names), dtype=np.float32)[y_idx]
    else:
        y = np.asarray(labels, dtype=np.float32)
        if y.ndim != 2 or y.shape[0] != x.shape[0]:
            raise ValueError(f"multi-label probe wants an (N, C) matrix, got {y.shape}")
        names = [str(c) for c in range(y.shape[1])]
        y_idx = y.argmax(axis=1)
    train_idx, test_idx = _stratified_split(y_idx, len(names), cfg.train_frac, cfg.seed)
    if len(test_idx) == 0:
        raise ValueError("probe test split is empty; lower train_frac")

    net = _train_probe(x[train_idx], y[train_idx], cfg)
    with T.no_grad():
        scores = net(Tensor(x[test_idx])).data

    aps = []
    for c in range(len(names)):
        pos = y[test_idx, c] > 0.5
        if pos.any():
            aps.append(average_precision(scores[:, c], pos))
    report = {"map": float(np.mean(aps)), "classes": names,
              "n_train": int(len(train_idx)), "n_test": int(len(test_idx)),
              "seed": cfg.seed}
    if cfg.task == "single":
        pred = scores.argmax(axis=1)
        report["accuracy"] = float(np.mean(pred == y_idx[test_idx]))
    return report


# -- zero-shot -----------------------------------------------------------------


def zero_shot(embeddings: np.ndarray, table: EmbeddingTable):
    """Argmax cosine against the store's text anchors.

    Returns (predicted labels, (N, L) similarity matrix); the label list is
    sorted, and ties resolve to the earliest (lowest-index) label.
    """
    labels = table.text_labels()
    if not labels:
        raise ValueError("zero_shot: embedding table has no text anchors")
    anchors = np.stack([table[TEXT_PREFIX + l] for l in labels])
    e = np.asarray(embeddings, dtype=np.float64)
    e = e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
    a = anchors / np.maximum(np.linalg.norm(anchors, axis=1, keepdims=True), 1e-12)
    sims = e @ a.T
    preds = [labels[i] for i in sims.argmax(axis=1)]
    return preds, sims


def zero_shot_accuracy(embeddings: np.ndarray, true_labels, table: EmbeddingTable) -> float:
    preds, _ = zero_shot(embeddings, table)
    return float(np.mean([p == t for p, t in zip(preds, true_labels)]))


# -- reconstruction metrics --------------------------------------------------------


def si_sdr(reference: np.ndarray, estimate: np.ndarray, cap: float = SI_SDR_CAP):
    """Scale-invariant SDR in dB, clamped to [-cap, cap]; None for a silent
    reference (the metric is undefined there)."""
    x = np.asarray(reference, dtype=np.float64).reshape(-1)
    y = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"si_sdr: length mismatch {x.shape} vs {y.shape}")
    ref_pow = float(np.dot(x, x))
    if ref_pow == 0.0:
        return None
    s = (np.dot(y, x) / ref_pow) * x
    err_pow = float(np.sum((y - s) ** 2))
    sig_pow = float(np.dot(s, s))
    if sig_pow == 0.0:     # nothing of the reference captured (zero/orthogonal)
        return -cap
    if err_pow == 0.0:
        return cap
    return float(np.clip(10.0 * np.log10(sig_pow / err_pow), -cap, cap))


def recon_metrics(reference: np.ndarray, estimate: np.ndarray) -> dict:
    """SI-SDR plus the multi-resolution spectral distance of the estimate."""
    ref = np.atleast_2d(np.asarray(reference, dtype=np.float32))
    est = np.atleast_2d(np.asarray(estimate, dtype=np.float32))
    if ref.shape != est.shape:
        raise ValueError(f"recon_metrics: shape mismatch {ref.shape} vs {est.shape}")
    with T.no_grad():
        dist = losses.mrstft_loss(Tensor(est), ref).item()
    return {"si_sdr": si_sdr(ref, est), "mrstft": dist}
