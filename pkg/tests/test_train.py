import json

import numpy as np
import pytest

from specvae import corpus, losses, train
from specvae import teacher as teacher_mod
from specvae.augment import Batch, rng_for
from specvae.optim import clip_grad_norm
from specvae.tensor import Tensor
from specvae import tensor as T


def _tiny_cfg(tmp_path, **kw):
    base = dict(preset="tiny", seed=3, steps=2, batch_size=4, clip_seconds=0.25,
                gan_start=1000, contrast_start=1000, teacher_start=1000,
                out_dir=str(tmp_path / "run"), checkpoint_every=1000,
                augment=False)
    base.update(kw)
    return train.load_config(overrides=base)


def _noise_batch(rows, samples, seed=0):
    rng = np.random.default_rng(seed)
    audio = (0.1 * rng.standard_normal((rows, samples))).astype(np.float32)
    return Batch(audio=audio, teacher_keys=[None] * rows, pair_count=rows // 2)


def _corpus_manifest(tmp_path, per_class=2):
    return corpus.build_synthetic_corpus(tmp_path / "corpus", per_class=per_class,
                                         duration_s=0.3, sample_rate=16000, seed=0)


# -- config ---------------------------------------------------------------------


def test_config_defaults_valid():
    cfg = train.load_config()
    assert cfg.batch_size == 8 and cfg.lr == 1e-3 and cfg.betas == (0.5, 0.99)


def test_config_precedence(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"lr": 0.5, "steps": 7}))
    cfg = train.load_config(path, overrides={"lr": 0.25})
    assert cfg.lr == 0.25          # flag beats file
    assert cfg.steps == 7          # file beats default
    assert cfg.batch_size == 8     # default survives


def test_config_rejects_unknown_field(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"learning_rate": 0.5}))
    with pytest.raises(ValueError, match="unknown field"):
        train.load_config(path)
    with pytest.raises(ValueError, match="unknown field"):
        train.load_config(overrides={"nope": 1})


def test_config_validation():
    with pytest.raises(ValueError, match="even"):
        train.load_config(overrides={"batch_size": 5})
    with pytest.raises(ValueError, match="non-decreasing"):
        train.load_config(overrides={"gan_start": 10, "contrast_start": 5})
    with pytest.raises(ValueError, match="preset"):
        train.load_config(overrides={"preset": "giant"})
    with pytest.raises(ValueError, match="batch_size >= 4"):
        train.load_config(overrides={"batch_size": 2, "steps": 50,
                                     "gan_start": 10, "contrast_start": 10,
                                     "teacher_start": 10})
    with pytest.raises(ValueError, match="workers"):
        train.load_config(overrides={"workers": 0})
    with pytest.raises(ValueError, match="SourceAugSpec"):
        train.load_config(overrides={"source_aug": {"pitch_probability": 0.1}})
    with pytest.raises(ValueError, match="MicDegradeSpec"):
        train.load_config(overrides={"mic_aug": {"snr": (5, 10)}})


def test_aug_override_reaches_batch_builder(tmp_path, monkeypatch):
    man = _corpus_manifest(tmp_path)
    seen = {}
    real = train.build_batch

    def spy(entries, pairs, duration, sr, src_spec, mic_spec, *a, **kw):
        seen["src"], seen["mic"] = src_spec, mic_spec
        return real(entries, pairs, duration, sr, src_spec, mic_spec, *a, **kw)

    monkeypatch.setattr(train, "build_batch", spy)
    cfg = _tiny_cfg(tmp_path, steps=1, augment=True, manifest=man,
                    source_aug={"reverb_p": 0.0, "pitch_semitones": (-1.0, 1.0)},
                    mic_aug={"noise_p": 0.05})
    train.fit(cfg)
    assert seen["src"].reverb_p == 0.0
    assert tuple(seen["src"].pitch_semitones) == (-1.0, 1.0)
    assert seen["src"].eq_p == 0.5          # untouched fields keep defaults
    assert seen["mic"].noise_p == 0.05


def test_config_json_roundtrip(tmp_path):
    cfg = train.load_config(overrides={"lr": 0.002, "preset": "tiny"})
    path = tmp_path / "saved.json"
    train.save_config(path, cfg)
    assert train.load_config(path) == cfg


# -- single steps -----------------------------------------------------------------


def test_one_step_descends_on_frozen_batch(tmp_path):
    # small-lr descent on the recon term in at least 8 of 10 seeds
    wins = 0
    for seed in range(10):
        cfg = _tiny_cfg(tmp_path, seed=seed, lr=1e-4, batch_size=2)
        state = train.TrainState(cfg)
        batch = _noise_batch(2, 4000, seed=seed)
        eps = rng_for(cfg.seed, 0, train.NOISE_TAG).standard_normal(
            (2,) + state.model.noise_shape(4000)).astype(np.float32)

        def recon_of(model):
            with T.no_grad():
                out = model.forward(batch.audio, eps)
                return losses.mrstft_loss(out["audio_hat"], batch.audio).item()

        before = recon_of(state.model)
        train.train_step(state, batch)
        wins += recon_of(state.model) < before
    assert wins >= 8, f"descent in only {wins}/10 seeds"


def test_nan_loss_skips_both_optimizers(tmp_path):
    cfg = _tiny_cfg(tmp_path)
    state = train.TrainState(cfg)
    name0, p0 = next(iter(state.model.named_parameters()))
    p0.data[...] = np.nan
    others = {n: p.data.copy() for n, p in state.model.named_parameters() if n != name0}
    metrics = train.train_step(state, _noise_batch(4, 4000))
    assert metrics["skipped"] and "non-finite" in metrics["skip_reason"]
    assert state.step == 1 and state.nan_steps == 1
    assert state.g_opt.t == 0 and state.d_opt.t == 0
    for n, p in state.model.named_parameters():
        if n != name0:
            assert np.array_equal(p.data, others[n])


def test_generator_gradients_never_touch_discriminator(tmp_path):
    # a full adversarial step must move the discriminator exactly as a
    # discriminator-only update from the same snapshot does
    cfg = _tiny_cfg(tmp_path, gan_start=0, contrast_start=0, teacher_start=0)
    batch = _noise_batch(4, 4000, seed=5)

    state_a = train.TrainState(cfg)
    metrics = train.train_step(state_a, batch)
    assert metrics["gen_adv"] > 0 and not metrics["skipped"]

    state_b = train.TrainState(cfg)
    eps = rng_for(cfg.seed, 0, train.NOISE_TAG).standard_normal(
        (4,) + state_b.model.noise_shape(4000)).astype(np.float32)
    out = state_b.model.forward(batch.audio, eps)
    real_logits, _ = state_b.disc(Tensor(batch.audio))
    fake_logits, _ = state_b.disc(Tensor(out["audio_hat"].data.copy()))
    losses.lsgan_disc_loss(real_logits, fake_logits).backward()
    clip_grad_norm([p for _, p in state_b.d_opt.named_params], cfg.grad_clip)
    state_b.d_opt.step()

    for (na, pa), (nb, pb) in zip(state_a.disc.named_parameters(),
                                  state_b.disc.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data), f"disc param {na} diverged"


def test_teacher_and_all_stages_wire_in(tmp_path):
    man = _corpus_manifest(tmp_path)
    table = teacher_mod.synth_teacher(corpus.read_manifest(man), dim=1024, seed=0)
    salt = tmp_path / "teacher.salt"
    teacher_mod.save_embeddings(salt, table)

    cfg = _tiny_cfg(tmp_path, steps=1, gan_start=0, contrast_start=0, teacher_start=0,
                    manifest=str(man), teacher_file=str(salt))
    res = train.fit(cfg)
    line = json.loads([ln for ln in open(res["metrics"]) if "mrstft" in ln][-1])
    assert line["teacher"] > 0 and line["contrast"] != 0 and line["disc"] > 0
    assert res["state"].d_opt.t == 1 and res["state"].g_opt.t == 1


# -- checkpoint / fit --------------------------------------------------------------


def test_checkpoint_roundtrip_then_identical_step(tmp_path):
    cfg = _tiny_cfg(tmp_path)
    state = train.TrainState(cfg)
    for s in range(2):
        train.train_step(state, _noise_batch(4, 4000, seed=s))
    ck_a = tmp_path / "a.slwt"
    state.save_checkpoint(ck_a)

    fresh = train.TrainState(cfg)
    fresh.load_checkpoint(ck_a)
    ck_b = tmp_path / "b.slwt"
    fresh.save_checkpoint(ck_b)
    assert ck_a.read_bytes() == ck_b.read_bytes()
    assert ck_a.with_suffix(".json").read_bytes() == ck_b.with_suffix(".json").read_bytes()

    batch = _noise_batch(4, 4000, seed=9)
    train.train_step(state, batch)
    train.train_step(fresh, batch)
    state.save_checkpoint(ck_a)
    fresh.save_checkpoint(ck_b)
    assert ck_a.read_bytes() == ck_b.read_bytes()


def test_fit_artifacts_and_bit_exact_resume(tmp_path):
    man = _corpus_manifest(tmp_path)
    cfg = train.load_config(overrides=dict(
        preset="tiny", seed=7, steps=4, batch_size=4, clip_seconds=0.25,
        gan_start=1000, contrast_start=1000, teacher_start=1000, augment=True,
        manifest=str(man), out_dir=str(tmp_path / "run1"), checkpoint_every=2))
    res = train.fit(cfg)
    names = [p.name for p in res["checkpoints"]]
    assert names == ["ckpt_000002.slwt", "ckpt_000004.slwt"]
    assert (tmp_path / "run1" / "config.json").exists()

    lines = [json.loads(ln) for ln in open(res["metrics"]) if "mrstft" in ln]
    assert [ln["step"] for ln in lines] == [0, 1, 2, 3]
    for ln in lines:
        assert ln["kl_weight"] == losses.kl_weight(ln["step"], cfg.kl_period,
                                                   cfg.kl_ramp, cfg.kl_peak)
        assert np.isfinite(ln["mrstft"]) and np.isfinite(ln["gen_total"])

    cfg2 = train.load_config(overrides=dict(
        preset="tiny", seed=7, steps=4, batch_size=4, clip_seconds=0.25,
        gan_start=1000, contrast_start=1000, teacher_start=1000, augment=True,
        manifest=str(man), out_dir=str(tmp_path / "run2"), checkpoint_every=2))
    res2 = train.fit(cfg2, resume=res["checkpoints"][0])
    final1 = res["checkpoints"][-1]
    final2 = res2["checkpoints"][-1]
    assert final2.name == "ckpt_000004.slwt"
    assert final1.read_bytes() == final2.read_bytes()
    assert final1.with_suffix(".json").read_bytes() == final2.with_suffix(".json").read_bytes()


def test_fit_unreadable_entries(tmp_path):
    man = _corpus_manifest(tmp_path, per_class=3)   # 12 entries
    with open(man, "a") as f:
        f.write("missing/void.wav\tghost\n")        # 1 of 13 bad: tolerated
    cfg = _tiny_cfg(tmp_path, steps=1, manifest=str(man))
    res = train.fit(cfg)
    assert res["unreadable"] == 1

    from pathlib import Path
    man2 = Path(man).parent / "bad.txt"   # same directory so good entries resolve
    man2.write_text("gone1.wav\tx\ngone2.wav\tx\n" +
                    open(man).read().splitlines()[0] + "\n")
    cfg2 = _tiny_cfg(tmp_path, steps=1, manifest=str(man2),
                     out_dir=str(tmp_path / "run_bad"))
    with pytest.raises(ValueError, match="unreadable"):
        train.fit(cfg2)
