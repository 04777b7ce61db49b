import json
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from specvae.teacher import TEXT_PREFIX, load_embeddings
from teacher_export import ExportJob, StubBackend, export, resolve_backend
from teacher_export.cli import main as cli_main

SR = 16000


def _write_clip(path: Path, seed: int):
    rng = np.random.default_rng(seed)
    t = np.arange(SR // 2) / SR
    f0 = rng.uniform(100.0, 2000.0)
    x = np.sin(2 * np.pi * f0 * t) * 0.4 + 0.05 * rng.standard_normal(len(t))
    wavfile.write(path, SR, x.astype(np.float32))


@pytest.fixture(scope="module")
def ten_clip_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("clips")
    rows = []
    for i in range(10):
        rel = f"clip_{i:02d}.wav"
        _write_clip(root / rel, seed=i)
        rows.append(f"{rel}\t{'speech' if i % 2 else 'music'}")
    man = root / "manifest.txt"
    man.write_text("\n".join(rows) + "\n")
    return str(man)


def test_export_loads_clean_in_primary_loader(ten_clip_manifest, tmp_path):
    out = tmp_path / "teacher.salt"
    summary = export(ExportJob(manifest=ten_clip_manifest, out_path=str(out)))
    assert summary["written"] == 12 and not summary["skipped"]
    table = load_embeddings(out)   # validates magic, norms, duplicates
    assert table.dim == 1024
    assert len(table) == 12
    assert table.text_labels() == ["music", "speech"]
    for i in range(10):
        assert f"clip_{i:02d}.wav" in table


def test_repeat_export_cosine(ten_clip_manifest, tmp_path):
    a = tmp_path / "a.salt"
    b = tmp_path / "b.salt"
    export(ExportJob(manifest=ten_clip_manifest, out_path=str(a)))
    export(ExportJob(manifest=ten_clip_manifest, out_path=str(b)))
    ta, tb = load_embeddings(a), load_embeddings(b)
    for key in ta.keys():
        cos = float(np.dot(ta[key].astype(np.float64), tb[key].astype(np.float64)))
        assert cos >= 0.999, f"{key}: repeat cosine {cos}"
    assert a.read_bytes() == b.read_bytes()


def test_duplicate_manifest_key_kept_once_with_warning(ten_clip_manifest, tmp_path):
    man = Path(ten_clip_manifest)
    dup = man.parent / "dup_manifest.txt"
    lines = man.read_text().splitlines()
    dup.write_text("\n".join(lines + [lines[0]]) + "\n")
    out = tmp_path / "dup.salt"
    with pytest.warns(UserWarning, match="duplicate"):
        summary = export(ExportJob(manifest=str(dup), out_path=str(out)))
    assert summary["duplicates"] == ["clip_00.wav"]
    assert summary["written"] == 12
    assert len(load_embeddings(out)) == 12


def test_unreadable_clip_skipped_and_listed(ten_clip_manifest, tmp_path):
    man = Path(ten_clip_manifest)
    broken = man.parent / "broken_manifest.txt"
    broken.write_text(man.read_text() + "missing.wav\tmusic\n")
    out = tmp_path / "partial.salt"
    summary = export(ExportJob(manifest=str(broken), out_path=str(out)))
    assert [rel for rel, _ in summary["skipped"]] == ["missing.wav"]
    table = load_embeddings(out)
    assert "missing.wav" not in table and len(table) == 12


def test_wrong_backend_dim_aborts_before_writing(ten_clip_manifest, tmp_path):
    out = tmp_path / "never.salt"
    with pytest.raises(ValueError, match="dim 512"):
        export(ExportJob(manifest=ten_clip_manifest, out_path=str(out)),
               backend=StubBackend(seed=0, dim=512))
    assert not out.exists()


def test_zero_norm_embedding_rejected(ten_clip_manifest, tmp_path):
    class ZeroBackend:
        dim = 1024

        def embed_audio(self, clips, sample_rate):
            return np.zeros((len(clips), 1024))

        def embed_text(self, labels):
            return np.ones((len(labels), 1024))

    with pytest.raises(ValueError, match="zero-norm"):
        export(ExportJob(manifest=ten_clip_manifest,
                         out_path=str(tmp_path / "zero.salt")),
               backend=ZeroBackend())


def test_explicit_label_list_and_seeded_model(ten_clip_manifest, tmp_path):
    out = tmp_path / "labels.salt"
    job = ExportJob(manifest=ten_clip_manifest, out_path=str(out),
                    labels=["drums", "vocals", "synth"], model="stub:7")
    export(job)
    table = load_embeddings(out)
    assert table.text_labels() == ["drums", "synth", "vocals"]
    assert len(table) == 13
    # a different stub seed changes the projection
    other = tmp_path / "other.salt"
    export(ExportJob(manifest=ten_clip_manifest, out_path=str(other),
                     labels=["drums"], model="stub:8"))
    t2 = load_embeddings(other)
    assert not np.allclose(table["clip_00.wav"], t2["clip_00.wav"])


def test_resolve_backend_stub_forms():
    assert isinstance(resolve_backend("stub"), StubBackend)
    assert resolve_backend("stub:5").seed == 5
    assert resolve_backend("stub").dim == 1024


def test_cli_export(ten_clip_manifest, tmp_path, capsys):
    out = tmp_path / "cli.salt"
    code = cli_main(["--manifest", ten_clip_manifest, "--out", str(out),
                     "--model", "stub:3", "--batch-size", "4"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["written"] == 12
    assert load_embeddings(out).dim == 1024


def test_cli_data_error(tmp_path, capsys):
    code = cli_main(["--manifest", str(tmp_path / "nope.txt"),
                     "--out", str(tmp_path / "x.salt")])
    assert code == 2
    assert "error" in capsys.readouterr().err
