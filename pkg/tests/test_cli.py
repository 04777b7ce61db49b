import json
from pathlib import Path

import numpy as np
import pytest

from specvae import cli, corpus, dsp, train
from specvae.checkpoint import load_latents


@pytest.fixture(scope="module")
def wav_second(tmp_path_factory):
    path = tmp_path_factory.mktemp("audio") / "one_second.wav"
    rng = np.random.default_rng(0)
    t = np.arange(16000) / 16000.0
    x = (0.3 * np.sin(2 * np.pi * 330 * t) + 0.05 * rng.standard_normal(16000))
    dsp.save_wav(path, dsp.AudioClip(x.astype(np.float32), 16000))
    return str(path)


@pytest.fixture(scope="module")
def manifest_small(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return str(corpus.build_synthetic_corpus(root / "c", per_class=2,
                                             duration_s=0.3, sample_rate=16000,
                                             seed=0))


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unknown_command_and_flag_are_usage_errors(capsys):
    assert cli.main(["not-a-command"]) == cli.EXIT_USAGE
    assert cli.main(["encode", "x.wav", "--no-such-flag"]) == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["--help"]) == cli.EXIT_OK


def test_encode_decode_roundtrip_same_length(tmp_path, capsys, wav_second):
    latents = str(tmp_path / "clip.slz1")
    code, out, _ = run(capsys, "encode", wav_second, "--preset", "tiny",
                       "--seed", "1", "--out", latents)
    assert code == cli.EXIT_OK
    info = json.loads(out)
    assert info["frames"] == 8 and info["dim"] == 8   # ceil(63 / 8) latent frames
    mu, meta = load_latents(latents)
    assert mu.shape == (8, 8) and meta["sample_rate"] == 16000

    wav_out = str(tmp_path / "clip_rt.wav")
    code, out, _ = run(capsys, "decode", latents, "--preset", "tiny",
                       "--seed", "1", "--out", wav_out)
    assert code == cli.EXIT_OK
    clip = dsp.load_wav(wav_out)
    assert len(clip) == 16000   # sidecar restores the exact input length


def test_decode_rejects_mismatched_header(tmp_path, capsys, wav_second):
    latents = str(tmp_path / "clip.slz1")
    assert run(capsys, "encode", wav_second, "--preset", "tiny",
               "--out", latents)[0] == cli.EXIT_OK
    code, _, err = run(capsys, "decode", latents, "--preset", "small128")
    assert code == cli.EXIT_DATA
    assert "does not match model" in err


def test_encode_rejects_wrong_sample_rate(tmp_path, capsys):
    path = tmp_path / "wrong_rate.wav"
    dsp.save_wav(path, dsp.AudioClip(np.zeros(8000, dtype=np.float32), 8000))
    code, _, err = run(capsys, "encode", str(path), "--preset", "tiny")
    assert code == cli.EXIT_DATA
    assert "sample rate" in err


def test_encode_missing_file_is_data_error(capsys):
    code, _, err = run(capsys, "encode", "no_such_file.wav", "--preset", "tiny")
    assert code == cli.EXIT_DATA


def test_roundtrip_reports_metrics(tmp_path, capsys, wav_second):
    recon = str(tmp_path / "recon.wav")
    code, out, _ = run(capsys, "roundtrip", wav_second, "--preset", "tiny",
                       "--out", recon)
    assert code == cli.EXIT_OK
    metrics = json.loads(out)
    assert set(metrics) == {"si_sdr", "mrstft"}
    assert np.isfinite(metrics["mrstft"])
    assert Path(recon).exists()


def test_grad_check_passes(capsys):
    code, out, _ = run(capsys, "grad-check")
    assert code == cli.EXIT_OK
    assert "max relative error" in out
    assert "FAIL" not in out


def test_grad_check_numeric_exit_on_impossible_tolerance(capsys):
    code, _, err = run(capsys, "grad-check", "--tol", "1e-30")
    assert code == cli.EXIT_NUMERIC


def test_rf_report(capsys):
    code, out, _ = run(capsys, "rf-report", "--preset", "tiny")
    assert code == cli.EXIT_OK
    report = json.loads(out)
    assert report["probed_frames"] == report["analytic_frames"]


def test_synth_teacher_and_zeroshot_and_probe(tmp_path, capsys, manifest_small):
    salt = str(tmp_path / "teacher.salt")
    code, out, _ = run(capsys, "synth-teacher", "--manifest", manifest_small,
                       "--out", salt, "--dim", "1024", "--seed", "5")
    assert code == cli.EXIT_OK
    assert json.loads(out)["records"] == 12   # 8 clips + 4 text anchors

    csv_out = str(tmp_path / "preds.csv")
    code, out, _ = run(capsys, "zeroshot", "--manifest", manifest_small,
                       "--teacher", salt, "--preset", "tiny", "--out", csv_out)
    assert code == cli.EXIT_OK
    result = json.loads(out)
    assert 0.0 <= result["accuracy"] <= 1.0 and result["n"] == 8
    lines = Path(csv_out).read_text().splitlines()
    assert lines[0] == "key,prediction,similarity" and len(lines) == 9

    code, out, _ = run(capsys, "probe", "--manifest", manifest_small,
                       "--preset", "tiny", "--epochs", "20")
    assert code == cli.EXIT_OK
    report = json.loads(out)
    assert "accuracy" in report and "map" in report


def test_export_latents(tmp_path, capsys, manifest_small):
    out_dir = str(tmp_path / "latents")
    code, out, _ = run(capsys, "export-latents", "--manifest", manifest_small,
                       "--preset", "tiny", "--out", out_dir)
    assert code == cli.EXIT_OK
    assert json.loads(out)["count"] == 8
    files = sorted(Path(out_dir).glob("*.slz1"))
    assert len(files) == 8
    mu, meta = load_latents(files[0])
    assert meta["dim"] == 8


def test_train_command_writes_checkpoint(tmp_path, capsys, manifest_small):
    run_dir = str(tmp_path / "run")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "preset": "tiny", "steps": 2, "batch_size": 4, "clip_seconds": 0.25,
        "gan_start": 100, "contrast_start": 100, "teacher_start": 100,
        "checkpoint_every": 100, "augment": False}))
    code, out, _ = run(capsys, "train", "--config", str(cfg_path),
                       "--manifest", manifest_small, "--out", run_dir,
                       "--seed", "2")
    assert code == cli.EXIT_OK
    info = json.loads(out)
    assert info["steps"] == 2 and info["nan_steps"] == 0
    assert Path(info["checkpoint"]).exists()
    # encode with the trained checkpoint loads the EMA table
    wav = tmp_path / "probe.wav"
    dsp.save_wav(wav, dsp.AudioClip(np.zeros(4000, dtype=np.float32), 16000))
    code, out, _ = run(capsys, "encode", str(wav), "--preset", "tiny",
                       "--weights", info["checkpoint"],
                       "--out", str(tmp_path / "z.slz1"))
    assert code == cli.EXIT_OK


def test_seeded_encode_is_reproducible(tmp_path, capsys, wav_second):
    a, b = str(tmp_path / "a.slz1"), str(tmp_path / "b.slz1")
    assert run(capsys, "encode", wav_second, "--preset", "tiny", "--seed", "7",
               "--out", a)[0] == cli.EXIT_OK
    assert run(capsys, "encode", wav_second, "--preset", "tiny", "--seed", "7",
               "--out", b)[0] == cli.EXIT_OK
    assert Path(a).read_bytes() == Path(b).read_bytes()