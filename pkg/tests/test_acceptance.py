"""End-to-end acceptance gates.

Each test is one released-behavior guarantee: gradient fidelity, latent
geometry, receptive field, parameter budgets, loss reference values, STFT
fidelity, overfit descent, semantic separation, bit-exact determinism, and
the discriminator bank contract. The two training gates run real multi-
minute fits; the whole file is the slow half of the suite by design.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from specvae import corpus, dsp, evaluation, gradcheck, losses
from specvae import teacher as teacher_mod
from specvae import train
from specvae.discriminator import BAND_EDGES, DiscriminatorBank, band_rows
from specvae.model import PRESETS, FreqVAE, ModelConfig
from specvae.tensor import Tensor

SR = 16000


def test_gradient_suite_under_tolerance_and_time():
    t0 = time.perf_counter()
    errs = {name: fn() for name, fn in gradcheck.SUITE}
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    bad = {n: e for n, e in errs.items() if not e < 1e-6}
    assert not bad, f"finite-difference failures: {bad}"
    assert worst < 1e-6
    assert elapsed < 300.0, f"gradient suite took {elapsed:.1f}s"


def test_latent_grid_ten_seconds_default_model():
    model = FreqVAE(PRESETS["small128"], seed=0)
    cfg = model.cfg
    audio = 0.1 * np.random.default_rng(0).standard_normal((1, 10 * SR))
    mu = model.encode_mu(audio.astype(np.float32))
    assert mu.shape == (1, cfg.latent_dim, 79)
    # padding formula: ceil(ceil(T / hop) / time_factor)
    m = -(-10 * SR // cfg.hop)
    assert -(-m // cfg.time_factor) == 79
    assert cfg.hop * cfg.time_factor / cfg.sample_rate == 0.128
    assert abs(cfg.latent_hz - 7.8125) < 1e-12


def test_receptive_field_probe_matches_analytic_on_random_configs():
    rng = np.random.default_rng(2024)
    for i in range(5):
        cfg = ModelConfig(
            channels=tuple(int(rng.choice([4, 8])) for _ in range(8)),
            latent_dim=4,
            time_dilations=tuple(int(rng.choice([1, 2, 4])) for _ in range(8)),
            time_stride_blocks=tuple(sorted(
                rng.choice(np.arange(1, 9), size=3, replace=False).tolist())),
            enc_time_kernel=int(rng.choice([3, 5])))
        model = FreqVAE(cfg, seed=i)
        probed = model.probe_receptive_field(seed=i)
        analytic = model.analytic_receptive_field()["frames"]
        assert probed == analytic, f"config {i}: probe {probed} != {analytic}"
    rf = FreqVAE(PRESETS["small128"], seed=0).analytic_receptive_field()
    assert 4.5 <= rf["seconds"] <= 6.5


def test_parameter_budgets():
    small = FreqVAE(PRESETS["small128"], seed=0).num_parameters()
    large = FreqVAE(PRESETS["large128"], seed=0).num_parameters()
    assert 0.8 * 6.8e6 <= small <= 1.2 * 6.8e6, f"small128 has {small} params"
    assert 0.8 * 53.6e6 <= large <= 1.2 * 53.6e6, f"large128 has {large} params"


def test_loss_reference_values():
    def kld(mu, lv):
        return losses.kld_loss(Tensor(np.full((1,), mu, dtype=np.float32)),
                               Tensor(np.full((1,), lv, dtype=np.float32))).item()

    assert kld(0.0, 0.0) == 0.0
    assert kld(1.0, 0.0) == 0.5

    e1 = np.zeros((1, 4), dtype=np.float32); e1[0, 0] = 1.0
    e2 = np.zeros((1, 4), dtype=np.float32); e2[0, 1] = 1.0
    valid = np.ones(1)
    pairs = [(e1, e1, 1.0), (e1, e2, 2.0), (e1, -e1, 3.0)]
    for student, teacher_vec, want in pairs:
        got = losses.masked_teacher_loss(Tensor(student), teacher_vec, valid).item()
        assert got == want, f"teacher loss {got} != {want}"

    # two positive pairs, identical within a pair, orthogonal across pairs
    proj = Tensor(np.array([[1, 0], [0, 1], [1, 0], [0, 1]], dtype=np.float32))
    got = losses.ntxent_loss(proj, temperature=1.0).item()
    assert abs(got - math.log((math.e + 2.0) / math.e)) < 1e-6
    same = Tensor(np.ones((6, 3), dtype=np.float32))
    assert abs(losses.ntxent_loss(same, 1.0).item() - math.log(5.0)) < 1e-6

    peak, period, ramp = 1e-2, 5000, 0.5
    assert losses.kl_weight(0, period, ramp, peak) == 0.0
    mid = losses.kl_weight(int(ramp * period / 2), period, ramp, peak)
    assert math.isclose(mid, peak / 2, rel_tol=1e-12)
    for hold_step in (2500, 3000, 4999):
        assert losses.kl_weight(hold_step, period, ramp, peak) == peak
    assert losses.kl_weight(period, period, ramp, peak) == 0.0  # periodic


def test_stft_roundtrip_and_self_distance():
    rng = np.random.default_rng(1)
    n = SR
    noise = rng.standard_normal(n)
    impulse = np.zeros(n); impulse[n // 3] = 1.0
    t = np.arange(n) / SR
    sine = np.sin(2 * np.pi * 440.0 * t)
    for x in (noise, impulse, sine):
        spec = dsp.stft(x, SR, 512, 256)
        back = dsp.istft(spec, n)
        assert np.max(np.abs(back - x)) < 1e-6
    ref = (0.1 * noise).astype(np.float32)
    self_dist = losses.mrstft_loss(Tensor(ref[None, :]), ref[None, :]).item()
    assert self_dist == 0.0


@pytest.fixture(scope="module")
def overfit_manifest(tmp_path_factory):
    """Four steady sine clips: memorizable under the phase-sensitive
    reconstruction loss within the step budget. 0.128 s keeps the clip
    longer than the largest analysis window while halving the number of
    cycles the decoder must phase-lock."""
    root = tmp_path_factory.mktemp("overfit")
    n = int(0.128 * SR)
    t = np.arange(n) / SR
    rows = []
    for i, f in enumerate((211.0, 331.0, 521.0, 818.0)):
        x = np.sin(2 * np.pi * f * t).astype(np.float32)
        clip = dsp.normalize_rms(dsp.AudioClip(x, SR), -20.0)
        rel = f"tone_{i}.wav"
        dsp.save_wav(root / rel, dsp.AudioClip(dsp.soft_clip(clip.samples), SR))
        rows.append((rel, "tone"))
    man = root / "manifest.txt"
    corpus.write_manifest(man, rows)
    return str(man)


def test_overfit_descent_two_of_three_seeds(overfit_manifest, tmp_path):
    outcomes = []
    for seed in (0, 1, 2):
        recon = []
        cfg = train.load_config(None, dict(
            preset="tiny", seed=seed, steps=2000, batch_size=8,
            clip_seconds=0.128, lr=2e-3, gan_start=2000, contrast_start=2000,
            teacher_start=2000, kl_peak=0.0, augment=False,
            manifest=str(overfit_manifest),
            out_dir=str(tmp_path / f"run{seed}"), checkpoint_every=100000))
        t0 = time.perf_counter()
        train.fit(cfg, on_step=lambda m: recon.append(m["mrstft"]))
        minutes = (time.perf_counter() - t0) / 60
        assert minutes < 15.0, f"seed {seed}: {minutes:.1f} min for 2000 steps"
        outcomes.append(recon[-1] < 0.1 * recon[0])
    assert sum(outcomes) >= 2, f"descent succeeded in {sum(outcomes)}/3 seeds"


# gentle view augmentation: class identity survives every effect, and the
# training distribution stays close to the clean clips the metrics embed
MILD_SRC = dict(pitch_p=0.2, pitch_semitones=(-1.0, 1.0), eq_p=0.3, eq_db=(-3.0, 3.0),
                reverb_p=0.0, distort_p=0.0, gain_db=(-3.0, 3.0), jump_p=0.0,
                loudness_dbfs=(-22.0, -18.0))
MILD_MIC = dict(bandpass_p=0.0, mask_bands=1, codec_p=0.0, noise_p=0.0)


@pytest.fixture(scope="module")
def labeled_corpus(tmp_path_factory):
    """4-class corpus split into train and held-out manifests plus a
    synthetic teacher over the training entries."""
    root = tmp_path_factory.mktemp("semantic")
    man = corpus.build_synthetic_corpus(root / "c", per_class=20,
                                        duration_s=0.25, sample_rate=SR, seed=100)
    entries = corpus.read_manifest(man)
    train_e = [e for e in entries if int(e.rel[-7:-4]) < 12]
    held_e = [e for e in entries if int(e.rel[-7:-4]) >= 12]
    train_man = Path(man).parent / "train_manifest.txt"
    corpus.write_manifest(train_man, [(e.rel, e.label) for e in train_e])
    table = teacher_mod.synth_teacher(train_e, dim=1024, seed=100, noise_sigma=0.01)
    salt = root / "teacher.salt"
    teacher_mod.save_embeddings(salt, table)
    return {"train_manifest": str(train_man), "held": held_e,
            "all": entries, "salt": str(salt), "table": table}


def _embed(model, entries, project):
    return np.stack([project(model, dsp.load_wav(e.path).samples[None, :])[0]
                     for e in entries])


def test_semantic_separation_beats_reconstruction_control(labeled_corpus, tmp_path):
    def run(tag, start):
        cfg = train.load_config(None, dict(
            preset="tiny", seed=11, steps=3000, batch_size=8, clip_seconds=0.25,
            gan_start=start, contrast_start=start, teacher_start=start,
            lambda_adv=0.0, lambda_fm=0.0, augment=True, clean_anchor=True,
            source_aug=MILD_SRC, mic_aug=MILD_MIC,
            manifest=labeled_corpus["train_manifest"],
            teacher_file=labeled_corpus["salt"],
            out_dir=str(tmp_path / tag), checkpoint_every=100000))
        return train.fit(cfg)["state"].model

    full = run("full", 0)        # contrastive + teacher over the whole run
    ctrl = run("ctrl", 3000)     # reconstruction + KLD only

    held = labeled_corpus["held"]
    held_labels = [e.label for e in held]

    pc = _embed(full, held, evaluation.project_contrast)
    pc = pc / np.linalg.norm(pc, axis=1, keepdims=True)
    sims = pc @ pc.T
    same = np.equal.outer(held_labels, held_labels)
    off_diag = ~np.eye(len(held), dtype=bool)
    gap = sims[same & off_diag].mean() - sims[~same].mean()
    assert gap >= 0.2, f"positive-negative cosine gap {gap:.3f}"

    pl = _embed(full, held, evaluation.project_teacher)
    zs = evaluation.zero_shot_accuracy(pl, held_labels, labeled_corpus["table"])
    assert zs >= 0.9, f"zero-shot accuracy {zs:.3f}"

    labels = [e.label for e in labeled_corpus["all"]]
    probe_cfg = evaluation.ProbeConfig(seed=0, train_frac=0.5)
    acc_full = evaluation.probe(_embed(full, labeled_corpus["all"],
                                       evaluation.pooled_mu),
                                labels, probe_cfg)["accuracy"]
    acc_ctrl = evaluation.probe(_embed(ctrl, labeled_corpus["all"],
                                       evaluation.pooled_mu),
                                labels, probe_cfg)["accuracy"]
    assert acc_full >= 0.9, f"probe accuracy {acc_full:.3f}"
    assert acc_ctrl < acc_full, (f"control probe {acc_ctrl:.3f} not below "
                                 f"full-loss probe {acc_full:.3f}")


@pytest.fixture(scope="module")
def determinism_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("determinism")
    man = corpus.build_synthetic_corpus(root / "c", per_class=2,
                                        duration_s=0.3, sample_rate=SR, seed=5)
    table = teacher_mod.synth_teacher(corpus.read_manifest(man), dim=1024, seed=5)
    salt = root / "teacher.salt"
    teacher_mod.save_embeddings(salt, table)
    return str(man), str(salt)


def test_bit_identical_runs_and_resume(determinism_corpus, tmp_path):
    man, salt = determinism_corpus

    def cfg_for(tag):
        return train.load_config(None, dict(
            preset="tiny", seed=9, steps=100, batch_size=4, clip_seconds=0.25,
            gan_start=60, contrast_start=60, teacher_start=60,
            manifest=man, teacher_file=salt,
            out_dir=str(tmp_path / tag), checkpoint_every=90, workers=1))

    res_a = train.fit(cfg_for("a"))
    res_b = train.fit(cfg_for("b"))
    assert res_a["state"].nan_steps == 0
    ck_a = tmp_path / "a" / "ckpt_000100.slwt"
    ck_b = tmp_path / "b" / "ckpt_000100.slwt"
    assert ck_a.read_bytes() == ck_b.read_bytes()

    resumed = train.fit(cfg_for("c"), resume=tmp_path / "a" / "ckpt_000090.slwt")
    assert resumed["state"].step == 100
    ck_c = tmp_path / "c" / "ckpt_000100.slwt"
    assert ck_c.read_bytes() == ck_a.read_bytes()


def test_discriminator_bank_partition_and_lsgan_values():
    bank = DiscriminatorBank(seed=0)
    assert len(bank) == 18

    per_res = {}
    for ri, lo, hi in bank.slices:
        per_res.setdefault(ri, []).append((lo, hi))
    assert sorted(per_res) == [0, 1, 2]
    for ri, win in enumerate(bank.resolutions):
        bins = win // 2 + 1
        full, *bands = per_res[ri]
        assert full == (0, bins)
        assert bands == band_rows(bins)
        bands = sorted(bands)
        assert bands[0][0] == 0 and bands[-1][1] == bins
        for (_, hi), (lo, _) in zip(bands, bands[1:]):
            assert hi == lo  # contiguous, non-overlapping
        assert all(hi > lo for lo, hi in bands)

    def logits(value):
        return [Tensor(np.full((1, 1, 2, 2), value, dtype=np.float32))
                for _ in range(18)]

    assert losses.lsgan_gen_loss(logits(1.0)).item() == 0.0
    assert losses.lsgan_gen_loss(logits(0.0)).item() == 1.0
    assert losses.lsgan_disc_loss(logits(1.0), logits(0.0)).item() == 0.0
