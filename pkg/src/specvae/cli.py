"""Command-line surface: training, latent encode/decode, evaluation reports,
gradient and receptive-field self-checks.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or mismatched
files), 3 numeric failure (non-finite results, failed self-check).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus, dsp, evaluation, gradcheck, train
from . import teacher as teacher_mod
from .checkpoint import load_latents, load_weights, save_latents
from .model import PRESETS, FreqVAE

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class NumericFailure(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specvae",
                                description="frequency-domain VAE audio codec")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output path"):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--preset", choices=sorted(PRESETS), default="small128")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("train", help="run the staged training loop")
    common(sp, "run directory (overrides config out_dir)")
    # flags override the config file only when given, so drop argparse defaults
    sp.set_defaults(seed=None, preset=None, workers=None)
    sp.add_argument("--config", help="JSON file with TrainConfig fields")
    sp.add_argument("--manifest", help="corpus manifest")
    sp.add_argument("--teacher", help="SALT embedding table for distillation")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--resume", help="checkpoint to continue from")

    sp = sub.add_parser("encode", help="waveform -> latent sequence file")
    common(sp, "output .slz1 path")
    sp.add_argument("input", help="input WAV")
    sp.add_argument("--weights", help="SLWT checkpoint (fresh seeded model if absent)")
    sp.add_argument("--raw-weights", action="store_true",
                    help="use raw weights even when the checkpoint has an EMA table")

    sp = sub.add_parser("decode", help="latent sequence file -> waveform")
    common(sp, "output WAV path")
    sp.add_argument("input", help="input .slz1")
    sp.add_argument("--weights")
    sp.add_argument("--raw-weights", action="store_true")
    sp.add_argument("--length", type=int,
                    help="output sample count (default: sidecar value, else full grid)")

    sp = sub.add_parser("roundtrip", help="encode+decode a WAV and report metrics")
    common(sp, "optional reconstructed WAV path")
    sp.add_argument("input")
    sp.add_argument("--weights")
    sp.add_argument("--raw-weights", action="store_true")

    sp = sub.add_parser("probe", help="train a classifier probe on pooled latents")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--weights")
    sp.add_argument("--raw-weights", action="store_true")
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--hidden", type=int, default=128)
    sp.add_argument("--train-frac", type=float, default=0.5, dest="train_frac")

    sp = sub.add_parser("zeroshot", help="zero-shot label clips against text anchors")
    common(sp, "optional CSV of per-clip predictions")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--teacher", required=True, help="SALT table with text anchors")
    sp.add_argument("--weights")
    sp.add_argument("--raw-weights", action="store_true")

    sp = sub.add_parser("synth-teacher", help="write a synthetic teacher table")
    common(sp, "output .salt path (required)")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--dim", type=int, default=1024)
    sp.add_argument("--sigma", type=float, default=0.35)

    sp = sub.add_parser("grad-check", help="finite-difference suite over all ops")
    common(sp)
    sp.add_argument("--tol", type=float, default=gradcheck.TOL)

    sp = sub.add_parser("rf-report", help="analytic vs probed receptive field")
    common(sp)

    sp = sub.add_parser("export-latents", help="encode every manifest clip")
    common(sp, "output directory (required)")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--weights")
    sp.add_argument("--raw-weights", action="store_true")
    return p


# -- shared helpers ---------------------------------------------------------------


def _load_model(preset: str, seed: int, weights=None, raw=False) -> FreqVAE:
    model = FreqVAE(PRESETS[preset], seed=seed)
    if weights:
        table = load_weights(weights)
        prefix = "model." if raw or not any(k.startswith("ema.") for k in table) \
            else "ema."
        for name, p in model.named_parameters():
            key = prefix + name
            if key not in table:
                raise ValueError(f"{weights}: missing tensor {key} "
                                 f"(wrong --preset for this checkpoint?)")
            if table[key].shape != p.data.shape:
                raise ValueError(f"{weights}: {key} has shape {table[key].shape}, "
                                 f"model wants {p.data.shape} (check --preset)")
            p.data[...] = table[key]
        for name, buf in model.named_buffers():
            key = f"model_buf.{name}"
            if key in table:
                buf[...] = table[key]
    model.eval()
    return model


def _load_clip_for(model: FreqVAE, path: str) -> dsp.AudioClip:
    clip = dsp.load_wav(path)
    if clip.sample_rate != model.cfg.sample_rate:
        raise ValueError(f"{path}: sample rate {clip.sample_rate} != model rate "
                         f"{model.cfg.sample_rate}")
    return clip


def _encode_clip(model: FreqVAE, clip: dsp.AudioClip) -> np.ndarray:
    # frozen running stats: codec latents stay local in time
    return model.encode_mu(clip.samples[None, :], clip_stats=False)[0].T   # (latent frames, D)


def _write_latents(model, clip, out_path):
    mu = _encode_clip(model, clip)
    cfg = model.cfg
    save_latents(out_path, mu, cfg.sample_rate, cfg.hop, cfg.time_factor)
    Path(str(out_path) + ".json").write_text(
        json.dumps({"num_samples": len(clip)}) + "\n")
    return mu


def _decode_latents(model, mu, num_samples=None) -> np.ndarray:
    from . import tensor as T
    from .tensor import Tensor
    cfg = model.cfg
    mz = mu.shape[0]
    if num_samples is None:
        num_samples = mz * cfg.time_factor * cfg.hop
    m = dsp.frame_count(num_samples, cfg.hop)
    if -(-m // cfg.time_factor) != mz:
        raise ValueError(f"length {num_samples} needs {m} spectral frames which "
                         f"does not match {mz} latent frames")
    z = mu.T[None, :, None, :].astype(np.float32)
    with T.no_grad():
        spec = model.decode(Tensor(z))
        audio = model.output_audio(spec, m, num_samples)
    return audio.data[0]


def _manifest_clips(model, manifest):
    entries = corpus.read_manifest(manifest)
    out = []
    for e in entries:
        clip = _load_clip_for(model, e.path)
        out.append((e, clip))
    return out


def _pooled_embeddings(model, pairs, head=None):
    rows = []
    for _, clip in pairs:
        audio = clip.samples[None, :]
        if head == "teacher":
            rows.append(evaluation.project_teacher(model, audio)[0])
        else:
            rows.append(evaluation.pooled_mu(model, audio)[0])
    return np.stack(rows)


# -- commands ----------------------------------------------------------------------


def _cmd_train(args) -> int:
    overrides = {}
    for flag, field in (("seed", "seed"), ("preset", "preset"), ("steps", "steps"),
                        ("batch_size", "batch_size"), ("lr", "lr"),
                        ("manifest", "manifest"), ("teacher", "teacher_file"),
                        ("out", "out_dir"), ("workers", "workers")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[field] = v
    cfg = train.load_config(args.config, overrides)
    result = train.fit(cfg, resume=args.resume)
    state = result["state"]
    print(json.dumps({"checkpoint": str(result["checkpoints"][-1]),
                      "metrics": str(result["metrics"]),
                      "steps": state.step, "nan_steps": state.nan_steps}))
    if state.nan_steps > 0.1 * max(state.step, 1):
        print(f"numeric failure: {state.nan_steps}/{state.step} steps skipped "
              f"on non-finite losses", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_encode(args) -> int:
    model = _load_model(args.preset, args.seed, args.weights, args.raw_weights)
    clip = _load_clip_for(model, args.input)
    out = args.out or str(Path(args.input).with_suffix(".slz1"))
    mu = _write_latents(model, clip, out)
    print(json.dumps({"latents": out, "frames": int(mu.shape[0]),
                      "dim": int(mu.shape[1])}))
    return EXIT_OK


def _cmd_decode(args) -> int:
    model = _load_model(args.preset, args.seed, args.weights, args.raw_weights)
    mu, meta = load_latents(args.input)
    cfg = model.cfg
    expect = {"sample_rate": cfg.sample_rate, "hop": cfg.hop,
              "time_factor": cfg.time_factor, "dim": cfg.latent_dim}
    if meta != expect:
        raise ValueError(f"{args.input}: header {meta} does not match model {expect}")
    length = args.length
    sidecar = Path(args.input + ".json")
    if length is None and sidecar.exists():
        length = json.loads(sidecar.read_text())["num_samples"]
    audio = _decode_latents(model, mu, length)
    if not np.all(np.isfinite(audio)):
        raise NumericFailure(f"decode produced non-finite samples from {args.input}")
    out = args.out or str(Path(args.input).with_suffix(".wav"))
    dsp.save_wav(out, dsp.AudioClip(audio, cfg.sample_rate))
    print(json.dumps({"wav": out, "num_samples": int(len(audio))}))
    return EXIT_OK


def _cmd_roundtrip(args) -> int:
    model = _load_model(args.preset, args.seed, args.weights, args.raw_weights)
    clip = _load_clip_for(model, args.input)
    mu = _encode_clip(model, clip)
    audio = _decode_latents(model, mu, len(clip))
    if not np.all(np.isfinite(audio)):
        raise NumericFailure(f"roundtrip produced non-finite samples for {args.input}")
    metrics = evaluation.recon_metrics(clip.samples, audio)
    if args.out:
        dsp.save_wav(args.out, dsp.AudioClip(audio, model.cfg.sample_rate))
    print(json.dumps(metrics))
    return EXIT_OK


def _cmd_probe(args) -> int:
    model = _load_model(args.preset, args.seed, args.weights, args.raw_weights)
    pairs = _manifest_clips(model, args.manifest)
    labels = [e.label for e, _ in pairs]
    if any(l is None for l in labels):
        raise ValueError(f"{args.manifest}: probe needs a label on every entry")
    latents = _pooled_embeddings(model, pairs)
    cfg = evaluation.ProbeConfig(hidden=args.hidden, epochs=args.epochs,
                                 seed=args.seed, train_frac=args.train_frac)
    print(json.dumps(evaluation.probe(latents, labels, cfg)))
    return EXIT_OK


def _cmd_zeroshot(args) -> int:
    model = _load_model(args.preset, args.seed, args.weights, args.raw_weights)
    table = teacher_mod.load_embeddings(args.teacher)
    pairs = _manifest_clips(model, args.manifest)
    labels = [e.label for e, _ in pairs]
    if any(l is None for l in labels):
        raise ValueError(f"{args.manifest}: zero-shot needs a label on every entry")
    embs = _pooled_embeddings(model, pairs, head="teacher")
    preds, sims = evaluation.zero_shot(embs, table)
    accuracy = float(np.mean([p == t for p, t in zip(preds, labels)]))
    if args.out:
        with open(args.out, "w") as f:
            f.write("key,prediction,similarity\n")
            for (e, _), pred, row in zip(pairs, preds, sims):
                f.write(f"{e.rel},{pred},{row.max():.6f}\n")
    print(json.dumps({"accuracy": accuracy, "n": len(preds),
                      "labels": table.text_labels()}))
    return EXIT_OK


def _cmd_synth_teacher(args) -> int:
    if not args.out:
        raise ValueError("synth-teacher needs --out for the .salt file")
    entries = corpus.read_manifest(args.manifest)
    table = teacher_mod.synth_teacher(entries, dim=args.dim, seed=args.seed,
                                      noise_sigma=args.sigma)
    teacher_mod.save_embeddings(args.out, table)
    print(json.dumps({"table": args.out, "records": len(table), "dim": args.dim}))
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    worst = 0.0
    ok = True
    for name, fn in gradcheck.SUITE:
        err = fn()
        worst = max(worst, err)
        passed = err < args.tol
        ok = ok and passed
        print(f"{'PASS' if passed else 'FAIL'} {name:24s} max_err={err:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {args.tol:.1e})")
    if not ok:
        raise NumericFailure(f"gradient suite max error {worst:.3e} >= {args.tol:.1e}")
    return EXIT_OK


def _cmd_rf_report(args) -> int:
    model = FreqVAE(PRESETS[args.preset], seed=args.seed)
    analytic = model.analytic_receptive_field()
    probed = model.probe_receptive_field(seed=args.seed)
    print(json.dumps({"analytic_frames": analytic["frames"],
                      "analytic_seconds": round(analytic["seconds"], 4),
                      "probed_frames": probed}))
    if probed != analytic["frames"]:
        raise NumericFailure(f"probed receptive field {probed} frames != "
                             f"analytic {analytic['frames']}")
    return EXIT_OK


def _cmd_export_latents(args) -> int:
    if not args.out:
        raise ValueError("export-latents needs --out directory")
    model = _load_model(args.preset, args.seed, args.weights, args.raw_weights)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = _manifest_clips(model, args.manifest)
    written = []
    for e, clip in pairs:
        dest = out_dir / (Path(e.rel).stem + ".slz1")
        _write_latents(model, clip, dest)
        written.append(str(dest))
    print(json.dumps({"count": len(written), "dir": str(out_dir)}))
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "roundtrip": _cmd_roundtrip,
    "probe": _cmd_probe,
    "zeroshot": _cmd_zeroshot,
    "synth-teacher": _cmd_synth_teacher,
    "grad-check": _cmd_grad_check,
    "rf-report": _cmd_rf_report,
    "export-latents": _cmd_export_latents,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:   # argparse exits 2 on usage problems, 0 on --help
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except NumericFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
