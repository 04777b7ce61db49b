"""Staged training loop: spectral reconstruction + KL first, adversarial,
pair-contrastive and teacher distillation joining at configured steps.

Determinism contract: every random draw is keyed on (seed, step), parameters
and optimizer moments live in float32, and instance-norm running statistics
are snapped to their stored precision whenever a checkpoint is written, so a
resumed run continues bit-exactly from the file on disk.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus, dsp, losses, teacher as teacher_mod
from . import tensor as T
from .augment import MicDegradeSpec, SourceAugSpec, build_batch, rng_for
from .checkpoint import load_json, load_weights, save_json, save_weights
from .discriminator import DiscriminatorBank
from .model import PRESETS, FreqVAE
from .optim import EMA, AdamW, clip_grad_norm
from .tensor import Tensor

NOISE_TAG = 0x0E15  # keys the reparameterization draws apart from batch draws


@dataclass
class TrainConfig:
    preset: str = "small128"
    seed: int = 0
    steps: int = 2000
    batch_size: int = 8            # rows per batch; half of them are pair partners
    clip_seconds: float = 1.0
    lr: float = 1e-3
    betas: tuple = (0.5, 0.99)
    weight_decay: float = 0.0
    ema_momentum: float = 0.9999
    grad_clip: float = 10.0
    gan_start: int = 2000          # step at which each stage becomes active
    contrast_start: int = 2000
    teacher_start: int = 2000
    lambda_adv: float = 1.0
    lambda_fm: float = 10.0
    kl_peak: float = 1e-2
    kl_period: int = 5000
    kl_ramp: float = 0.5
    lambda_contrast: float = 0.1
    lambda_teacher: float = 1.0
    temperature: float = 0.2
    n_max: int = 1                 # max sources summed into one training mix
    augment: bool = True
    source_aug: dict | None = None  # SourceAugSpec field overrides
    mic_aug: dict | None = None     # MicDegradeSpec field overrides
    clean_anchor: bool = False     # A views skip effects and own teacher rows
    manifest: str | None = None
    teacher_file: str | None = None
    out_dir: str = "run"
    checkpoint_every: int = 500
    workers: int = 1

    def validate(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if not (self.gan_start <= self.contrast_start <= self.teacher_start):
            raise ValueError("stage starts must be non-decreasing: "
                             f"gan {self.gan_start} <= contrast {self.contrast_start} "
                             f"<= teacher {self.teacher_start}")
        if self.steps > self.contrast_start and self.batch_size < 4:
            raise ValueError("contrastive stage needs batch_size >= 4 (two pairs)")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        for d, spec in ((self.source_aug, SourceAugSpec), (self.mic_aug, MicDegradeSpec)):
            if d is not None:
                known = {f.name for f in dataclasses.fields(spec)}
                bad = set(d) - known
                if bad:
                    raise ValueError(f"unknown {spec.__name__} fields: {sorted(bad)}")
        return self


_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def load_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then config-file values, then explicit overrides."""
    merged = dataclasses.asdict(TrainConfig())
    for source, label in ((load_json(path) if path else {}, f"config {path}"),
                          (overrides or {}, "override")):
        for k, v in source.items():
            if k not in _FIELDS:
                raise ValueError(f"{label}: unknown field {k!r}")
            merged[k] = v
    merged["betas"] = tuple(merged["betas"])
    return TrainConfig(**merged).validate()


def save_config(path, cfg: TrainConfig):
    d = dataclasses.asdict(cfg)
    d["betas"] = list(d["betas"])
    save_json(path, d)


class TrainState:
    """Everything the loop mutates: step counter, nets, optimizers, EMA."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.step = 0
        self.nan_steps = 0
        self.model = FreqVAE(PRESETS[cfg.preset], seed=cfg.seed)
        self.disc = DiscriminatorBank(seed=cfg.seed)
        self.g_opt = AdamW(self.model.named_parameters(), lr=cfg.lr, betas=cfg.betas,
                           weight_decay=cfg.weight_decay)
        self.d_opt = AdamW(self.disc.named_parameters(), lr=cfg.lr, betas=cfg.betas,
                           weight_decay=cfg.weight_decay)
        self.ema = EMA(self.model.named_parameters(), momentum=cfg.ema_momentum)
        self.teacher_table = None

    # -- checkpointing -------------------------------------------------------

    def _buffer_items(self):
        for prefix, module in (("model_buf", self.model), ("disc_buf", self.disc)):
            for name, buf in module.named_buffers():
                yield f"{prefix}.{name}", buf

    def save_checkpoint(self, path):
        """SLWT weight table plus a JSON sidecar with the counters.

        Running-statistic buffers are quantized to float32 in place so the
        in-memory state equals the stored state exactly from here on.
        """
        table = {}
        for name, p in self.model.named_parameters():
            table[f"model.{name}"] = p.data
        for name, p in self.disc.named_parameters():
            table[f"disc.{name}"] = p.data
        for name, buf in self._buffer_items():
            q = buf.astype(np.float32)
            buf[...] = q
            table[name] = q
        table.update(dict(self.ema.state_tensors("ema")))
        table.update(dict(self.g_opt.state_tensors("opt_g")))
        table.update(dict(self.d_opt.state_tensors("opt_d")))
        save_weights(path, table)
        save_json(Path(path).with_suffix(".json"), {
            "step": self.step,
            "nan_steps": self.nan_steps,
            "g_t": self.g_opt.t, "d_t": self.d_opt.t,
            "g_skipped": self.g_opt.skipped_steps, "d_skipped": self.d_opt.skipped_steps,
        })

    def load_checkpoint(self, path):
        table = load_weights(path)
        for name, p in self.model.named_parameters():
            p.data[...] = table[f"model.{name}"]
        for name, p in self.disc.named_parameters():
            p.data[...] = table[f"disc.{name}"]
        for name, buf in self._buffer_items():
            buf[...] = table[name]
        self.ema.load_state_tensors("ema", table)
        self.g_opt.load_state_tensors("opt_g", table)
        self.d_opt.load_state_tensors("opt_d", table)
        meta = load_json(Path(path).with_suffix(".json"))
        self.step = meta["step"]
        self.nan_steps = meta["nan_steps"]
        self.g_opt.t, self.d_opt.t = meta["g_t"], meta["d_t"]
        self.g_opt.skipped_steps = meta["g_skipped"]
        self.d_opt.skipped_steps = meta["d_skipped"]


def _teacher_rows(table, keys, dim):
    targets = np.zeros((len(keys), dim), dtype=np.float32)
    valid = np.zeros(len(keys), dtype=np.float32)
    for i, k in enumerate(keys):
        if k is not None and table is not None and k in table:
            targets[i] = table[k]
            valid[i] = 1.0
    return targets, valid


def _finite(x: Tensor) -> bool:
    return bool(np.all(np.isfinite(x.data)))


def train_step(state: TrainState, batch) -> dict:
    """One alternation: discriminator update on detached output, then a
    generator update on the weighted total; EMA follows the generator.

    A non-finite loss skips the whole step (neither optimizer is touched)
    and is counted; the step counter still advances so the run never
    replays the same batch.
    """
    cfg, model, disc = state.cfg, state.model, state.disc
    s = state.step
    # a GAN stage with both adversarial weights at zero is disabled: the
    # discriminator would train against a generator that never sees it
    gan_on = s >= cfg.gan_start and (cfg.lambda_adv > 0 or cfg.lambda_fm > 0)
    contrast_on = s >= cfg.contrast_start
    teacher_on = s >= cfg.teacher_start and state.teacher_table is not None

    audio = batch.audio
    eps = rng_for(cfg.seed, s, NOISE_TAG).standard_normal(
        (audio.shape[0],) + model.noise_shape(audio.shape[1])).astype(np.float32)

    model.zero_grad()
    disc.zero_grad()
    out = model.forward(audio, eps)

    lam_kl = losses.kl_weight(s, cfg.kl_period, cfg.kl_ramp, cfg.kl_peak)
    recon = losses.mrstft_loss(out["audio_hat"], audio)
    kld = losses.kld_loss(out["mu"], out["logvar"])
    total = T.add(recon, T.mul(kld, Tensor(lam_kl)))
    metrics = {"step": s, "mrstft": recon.item(), "kld": kld.item(),
               "kl_weight": lam_kl, "contrast": 0.0, "teacher": 0.0,
               "gen_adv": 0.0, "fm": 0.0, "disc": 0.0, "skipped": False}

    pooled = None
    if contrast_on or teacher_on:
        pooled = model.pool_time(out["mu"])
    if contrast_on:
        contr = losses.ntxent_loss(model.contrast_head(pooled), cfg.temperature)
        metrics["contrast"] = contr.item()
        total = T.add(total, T.mul(contr, Tensor(cfg.lambda_contrast)))
    if teacher_on:
        targets, valid = _teacher_rows(state.teacher_table, batch.teacher_keys,
                                       model.cfg.teacher_dim)
        tl = losses.masked_teacher_loss(model.teacher_head(pooled), targets, valid)
        if tl is not None:
            metrics["teacher"] = tl.item()
            total = T.add(total, T.mul(tl, Tensor(cfg.lambda_teacher)))

    def skip(reason: str):
        model.zero_grad()
        disc.zero_grad()
        disc.set_requires_grad(True)
        state.nan_steps += 1
        state.step += 1
        metrics["skipped"] = True
        metrics["skip_reason"] = reason
        return metrics

    d_loss = None
    if gan_on:
        real_logits, real_feats = disc(Tensor(audio))
        fake_detached = Tensor(out["audio_hat"].data.copy())
        fake_logits_d, _ = disc(fake_detached)
        d_loss = losses.lsgan_disc_loss(real_logits, fake_logits_d)
        metrics["disc"] = d_loss.item()
        if not _finite(d_loss):
            return skip("non-finite discriminator loss")
        d_loss.backward()
        # generator-side pass through a frozen bank: no gradient may reach
        # discriminator weights from the generator objective
        disc.set_requires_grad(False)
        fake_logits_g, fake_feats_g = disc(out["audio_hat"])
        g_adv = losses.lsgan_gen_loss(fake_logits_g)
        real_np = [[f.data for f in per_critic] for per_critic in real_feats]
        fm = losses.feature_matching_loss(fake_feats_g, real_np)
        metrics["gen_adv"] = g_adv.item()
        metrics["fm"] = fm.item()
        total = T.add(total, T.add(T.mul(g_adv, Tensor(cfg.lambda_adv)),
                                   T.mul(fm, Tensor(cfg.lambda_fm))))

    metrics["gen_total"] = total.item()
    if not _finite(total):
        return skip("non-finite generator loss")

    total.backward()
    metrics["grad_norm_g"] = clip_grad_norm(
        [p for _, p in state.g_opt.named_params], cfg.grad_clip)
    if gan_on:
        metrics["grad_norm_d"] = clip_grad_norm(
            [p for _, p in state.d_opt.named_params], cfg.grad_clip)
        state.d_opt.step()
    g_ok = state.g_opt.step()
    if g_ok:
        state.ema.update()
    else:
        state.nan_steps += 1
        metrics["skipped"] = True
        metrics["skip_reason"] = "non-finite generator gradients"
    disc.set_requires_grad(True)
    state.step += 1
    return metrics


def load_corpus(manifest_path):
    """Manifest -> (rel, label, clip) triples; unreadable entries are skipped
    and counted, more than 10% unreadable aborts the run."""
    entries = corpus.read_manifest(manifest_path)
    loaded, failed = [], []
    for e in entries:
        try:
            loaded.append((e.rel, e.label, corpus.load_clip_cached(e.path)))
        except (OSError, ValueError) as exc:
            failed.append((e.rel, str(exc)))
    if not loaded:
        raise ValueError(f"{manifest_path}: no readable corpus entries")
    if len(failed) > 0.1 * len(entries):
        raise ValueError(f"{manifest_path}: {len(failed)}/{len(entries)} entries "
                         f"unreadable, first: {failed[0][0]}: {failed[0][1]}")
    return loaded, failed


def fit(cfg: TrainConfig, resume=None, on_step=None) -> dict:
    """Run the loop to cfg.steps; returns paths of artifacts written.

    Checkpoints land in cfg.out_dir every checkpoint_every steps and at the
    end; metrics append one JSON object per step to metrics.jsonl.
    """
    cfg.validate()
    if cfg.manifest is None:
        raise ValueError("training needs a corpus manifest")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, failed = load_corpus(cfg.manifest)

    state = TrainState(cfg)
    if cfg.teacher_file:
        state.teacher_table = teacher_mod.load_embeddings(cfg.teacher_file)
        if state.teacher_table.dim != state.model.cfg.teacher_dim:
            raise ValueError(f"teacher dim {state.teacher_table.dim} != model "
                             f"teacher head dim {state.model.cfg.teacher_dim}")
    if resume:
        state.load_checkpoint(resume)

    save_config(out_dir / "config.json", cfg)
    if cfg.augment:
        src_spec = SourceAugSpec(**(cfg.source_aug or {}))
        mic_spec = MicDegradeSpec(**(cfg.mic_aug or {}))
    else:
        src_spec, mic_spec = SourceAugSpec.none(), MicDegradeSpec.none()
    sr = state.model.cfg.sample_rate
    duration = int(round(cfg.clip_seconds * sr))

    checkpoints = []

    def save_now():
        path = out_dir / f"ckpt_{state.step:06d}.slwt"
        state.save_checkpoint(path)
        checkpoints.append(path)

    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "a" if resume else "w") as log:
        if failed:
            log.write(json.dumps({"event": "unreadable_entries",
                                  "count": len(failed),
                                  "keys": [k for k, _ in failed]}) + "\n")
        while state.step < cfg.steps:
            batch = build_batch(entries, cfg.batch_size // 2, duration, sr,
                                src_spec, mic_spec, cfg.seed, state.step,
                                n_max=cfg.n_max, clean_anchor=cfg.clean_anchor)
            metrics = train_step(state, batch)
            record = {k: (v if not isinstance(v, float) or np.isfinite(v) else None)
                      for k, v in metrics.items()}
            log.write(json.dumps(record) + "\n")
            if on_step is not None:
                on_step(metrics)
            if state.step % cfg.checkpoint_every == 0 or state.step >= cfg.steps:
                save_now()
    if not checkpoints or checkpoints[-1].name != f"ckpt_{state.step:06d}.slwt":
        save_now()
    return {"checkpoints": checkpoints, "metrics": metrics_path,
            "state": state, "unreadable": len(failed)}
