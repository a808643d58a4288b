"""``eat`` command line: augment | train | eval | bench | synth.

Exit codes: 0 success, 2 invalid input or configuration, 1 I/O or runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .augment import TRANSFORMS, AugmentPipeline, AugmentSpec
from .config import ConfigError, RunConfig, load_run_config, parse_value
from .data import WavError, load_manifest, load_split, read_wav, write_wav
from .mix import LabeledSample, MixKind, MixParams, apply_mix, draw_mix_params
from .model import EatConfig, build, eat_m, eat_s, param_count
from .phase_lab import InputMode, synthesize
from .signal import StftConfig, Waveform, pad_or_trim, resample
from .train import ema_model, evaluate, fit

log = logging.getLogger("eat")

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2
MIX_OPS = {k.value for k in MixKind}
OPS = sorted(set(TRANSFORMS) | MIX_OPS)


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ augment


def _op_params(op: str, items) -> dict:
    params = {}
    for item in items or ():
        key, _, value = item.partition("=")
        if not _ or "." not in key:
            raise UsageError(f"--param expects op.key=value, got {item!r}")
        target, name = key.split(".", 1)
        if target == op:
            params[name] = parse_value(value)
    return params


def cmd_augment(args) -> int:
    for op in args.op:
        if op not in OPS:
            raise UsageError(f"unknown op {op!r}; choose from {', '.join(OPS)}")
    mix_ops = [op for op in args.op if op in MIX_OPS]
    if mix_ops and (len(mix_ops) > 1 or args.op[-1] not in MIX_OPS):
        raise UsageError("a mixing op may appear once, as the last op in the chain")
    n_inputs = 2 if mix_ops else 1
    if len(args.files) != n_inputs + 1:
        want = "two inputs and an output" if mix_ops else "one input and an output"
        raise UsageError(f"expected {want}, got {len(args.files)} paths")
    *inputs, out_path = args.files

    rng = np.random.default_rng(args.seed)
    wav = read_wav(inputs[0])
    stages = []
    for op in args.op:
        if op in MIX_OPS:
            continue
        spec = AugmentSpec(op, _op_params(op, args.param), probability=1.0)
        wav, realized = TRANSFORMS[op](wav, spec.params, rng)
        stages.append({"op": op, **realized})

    sidecar = {"inputs": [str(p) for p in inputs], "seed": args.seed, "stages": stages}
    if mix_ops:
        kind = MixKind(mix_ops[0])
        other = read_wav(inputs[1])
        # second input is brought to the first one's rate and length
        other = pad_or_trim(resample(other, wav.sample_rate), len(wav))
        drawn = draw_mix_params(kind, rng)
        lam = drawn.lam if args.lam is None else args.lam
        p = drawn.p if args.p is None else args.p
        params = MixParams(lam, kind, p)
        mixed = apply_mix(LabeledSample(wav, np.array([1.0, 0.0])), LabeledSample(other, np.array([0.0, 1.0])),
                          params, rng, StftConfig(args.n_fft))
        wav = mixed.waveform
        stages.append({"op": kind.value, "lam": lam, "p": p})
        sidecar["label"] = mixed.label.tolist()
        sidecar["label_weights"] = {"first": float(mixed.label[0]), "second": float(mixed.label[1])}
    write_wav(out_path, wav, args.format)
    Path(out_path).with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return EXIT_OK


# -------------------------------------------------------------------- train


def _run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    for flag, key in (("manifest", "data.manifest"), ("audio_root", "data.audio_root"),
                      ("out", "run.output_dir"), ("threads", "run.threads"), ("seed", "train.seed"),
                      ("epochs", "train.epochs")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_run_config(args.config, overrides)


def _load_data(cfg: RunConfig):
    if not cfg.data.manifest:
        raise UsageError("no manifest: set data.manifest or pass --manifest")
    manifest = load_manifest(cfg.data.manifest, cfg.data.audio_root or None)
    if len(manifest.classes) != cfg.model.num_classes:
        raise UsageError(f"manifest has {len(manifest.classes)} classes but model.num_classes = "
                         f"{cfg.model.num_classes}")
    if manifest.multi_label != cfg.model.multi_label:
        raise UsageError(f"manifest multi_label={manifest.multi_label} disagrees with model.multi_label")
    return manifest, load_split(manifest, cfg.data.duration_s, cfg.data.sample_rate)


def _eval_folds(cfg: RunConfig, folds: list[int]) -> list[int]:
    if cfg.run.mode == "kfold":
        return folds
    f = cfg.data.eval_fold or folds[-1]
    if f not in folds:
        raise UsageError(f"data.eval_fold {f} is not among manifest folds {folds}")
    return [f]


def cmd_train(args) -> int:
    if args.resume:
        run_dir = Path(args.resume)
        cfg = load_run_config(run_dir / "config.txt", args.set)
    else:
        cfg = _run_config(args)
        run_dir = Path(cfg.run.output_dir)
        # absolute paths keep the stored config usable from any working directory
        if cfg.data.manifest:
            cfg.data.manifest = str(Path(cfg.data.manifest).resolve())
        if cfg.data.audio_root:
            cfg.data.audio_root = str(Path(cfg.data.audio_root).resolve())
    torch.set_num_threads(args.threads or cfg.run.threads)
    manifest, data = _load_data(cfg)
    folds = _eval_folds(cfg, manifest.folds)
    if len(manifest.folds) < 2:
        raise UsageError("training needs at least two folds")

    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text())
    pipeline = AugmentPipeline(cfg.pipeline_specs()) if cfg.pipeline_specs() else None
    mix = cfg.mix if cfg.mix.enabled else None
    metric = "mAP" if cfg.model.multi_label else "accuracy"
    meta_base = {"data": {"duration_s": cfg.data.duration_s, "sample_rate": cfg.data.sample_rate},
                 "classes": manifest.classes, "train": cfg.train.to_dict()}

    with open(run_dir / "metrics.jsonl", "a") as metrics:
        def emit(rec):
            metrics.write(json.dumps(rec) + "\n")
            metrics.flush()

        results = {}
        repeats = cfg.train.repeats
        for rep, f in ((r, f) for r in range(repeats) for f in folds):
            tag = {"fold": f} if repeats == 1 else {"fold": f, "repeat": rep}
            ckpt_path = run_dir / (f"fold{f}.ckpt" if repeats == 1 else f"fold{f}_rep{rep}.ckpt")
            train_idx = np.flatnonzero(data.folds != f)
            eval_split = data.subset(np.flatnonzero(data.folds == f))
            seed = cfg.train.seed + 1000 * rep + f
            model = state = None
            start = 0
            if args.resume and ckpt_path.exists():
                model, meta, state = checkpoint.load(ckpt_path, raw=True)
                start = int(meta["epochs_done"])
                if start >= cfg.train.epochs:
                    results[rep, f] = meta[metric]
                    continue
            elif args.resume:
                log.info("%s has no checkpoint; training from scratch", ckpt_path.name)

            def save(epoch, model, state, tag=tag, ckpt_path=ckpt_path, eval_split=eval_split):
                done = epoch + 1
                if done % cfg.run.checkpoint_every and done != cfg.train.epochs:
                    return
                meta = {**meta_base, **tag, "epochs_done": done}
                shadow = ema_model(model, state)
                if done == cfg.train.epochs:
                    meta[metric] = evaluate(shadow, eval_split, cfg.train)[metric]
                checkpoint.save(ckpt_path, model, meta, state, dict(shadow.named_parameters()))

            model, state, _ = fit(cfg.model, cfg.train, data.subset(train_idx), None, pipeline, mix,
                                  lambda rec, tag=tag: emit({**rec, **tag}),
                                  model, state, start, seed, save, args.stop_after)
            if args.stop_after is not None and args.stop_after < cfg.train.epochs:
                continue
            value = evaluate(ema_model(model, state), eval_split, cfg.train)[metric]
            emit({**tag, "split": "eval", metric: value, "step": state.step})
            results[rep, f] = value

    if results:
        per_repeat = [{str(f): results[r, f] for f in folds if (r, f) in results} for r in range(repeats)]
        summary = {"metric": metric, "per_fold": per_repeat[0] if repeats == 1 else per_repeat,
                   "mean": float(np.mean([np.mean(list(d.values())) for d in per_repeat if d]))}
        (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(json.dumps(summary))
    return EXIT_OK


# --------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    torch.set_num_threads(args.threads)
    model, meta, _ = checkpoint.load(args.checkpoint)
    data_meta = meta.get("data", {})
    duration = args.duration_s or data_meta.get("duration_s", 5.0)
    rate = args.sample_rate or data_meta.get("sample_rate", 22050)
    manifest = load_manifest(args.manifest, args.audio_root)
    cfg = model.config
    if len(manifest.classes) != cfg.num_classes:
        raise checkpoint.CheckpointError(
            f"checkpoint predicts {cfg.num_classes} classes, manifest has {len(manifest.classes)}")
    if manifest.multi_label != cfg.multi_label:
        raise checkpoint.CheckpointError("checkpoint and manifest disagree on multi-label")
    if "classes" in meta and meta["classes"] != manifest.classes:
        raise checkpoint.CheckpointError("manifest class names differ from the checkpoint's")
    records = manifest.records if args.fold is None else manifest.in_folds([args.fold])
    if not records:
        raise UsageError(f"no records in fold {args.fold}")
    split = load_split(manifest, duration, rate, records)
    result = evaluate(model, split)
    metric = "mAP" if cfg.multi_label else "accuracy"
    out = {"metric": metric, "value": result[metric], "loss": result["loss"], "n": len(split),
           "param_count": param_count(model)}
    print(json.dumps(out))
    return EXIT_OK


# -------------------------------------------------------------------- bench


def _bench_model(args) -> EatConfig:
    if args.config:
        return load_run_config(args.config, args.set).model
    return (eat_m if args.model == "eat-m" else eat_s)(args.num_classes)


def time_forward(model, x: torch.Tensor, repeats: int, warmup: int) -> list[float]:
    """Wall-clock milliseconds of ``repeats`` forward passes, after ``warmup`` untimed ones."""
    times = []
    with torch.no_grad():
        for _ in range(warmup):
            model(x)
        for _ in range(repeats):
            t0 = time.perf_counter()
            model(x)
            times.append(1e3 * (time.perf_counter() - t0))
    return times


def bench(cfg: EatConfig, durations, rate: int, repeats: int, warmup: int, seed: int = 0) -> list[dict]:
    """Median and 90th-percentile forward latency per duration."""
    model = build(cfg, seed).eval()
    rows = []
    for d in durations:
        n = int(round(d * rate))
        x = torch.from_numpy(np.random.default_rng(seed).standard_normal((1, cfg.in_channels, n))).float()
        times = time_forward(model, x, repeats, warmup)
        rows.append({"duration_s": d, "median_ms": float(np.median(times)),
                     "p90_ms": float(np.percentile(times, 90))})
    return rows


def cmd_bench(args) -> int:
    torch.set_num_threads(args.threads)
    try:
        durations = [float(s) for s in args.durations.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"cannot parse durations {args.durations!r}") from None
    if not durations or min(durations) <= 0:
        raise UsageError("durations must be positive")
    if args.repeats < 1 or args.warmup < 0:
        raise UsageError("need repeats >= 1 and warmup >= 0")
    rows = bench(_bench_model(args), durations, args.sample_rate, args.repeats, args.warmup)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=["duration_s", "median_ms", "p90_ms"])
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


# -------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    wav = read_wav(args.input)
    out = synthesize(wav.samples, InputMode(args.mode), wav.sample_rate, StftConfig(args.n_fft, args.hop))
    write_wav(args.output, Waveform(out, wav.sample_rate), args.format)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eat", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("augment", help="apply a transform chain (optionally ending in a mix) to WAV files")
    a.add_argument("--op", action="append", required=True, help=f"repeatable; one of {', '.join(OPS)}")
    a.add_argument("--lambda", dest="lam", type=float, help="mixing ratio (drawn when omitted)")
    a.add_argument("--p", type=float, help="freqmix band-order probability (drawn when omitted)")
    a.add_argument("--param", action="append", metavar="OP.KEY=VALUE",
                   help="override a transform parameter range, e.g. time_shift.max_fraction=0.05")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--n-fft", type=int, default=1024)
    a.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    a.add_argument("files", nargs="+", help="input.wav [input2.wav] output.wav")
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("train", help="k-fold or single-split training from a manifest")
    t.add_argument("--config", help="key = value run config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--manifest")
    t.add_argument("--audio-root")
    t.add_argument("--out", help="run directory (run.output_dir)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--resume", metavar="RUN_DIR", help="continue the run stored in RUN_DIR")
    t.add_argument("--stop-after", type=int, metavar="EPOCHS",
                   help="stop each fold after this many epochs, leaving resumable checkpoints")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--fold", type=int)
    e.add_argument("--audio-root")
    e.add_argument("--duration-s", type=float)
    e.add_argument("--sample-rate", type=int)
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="forward latency versus input duration")
    b.add_argument("--config")
    b.add_argument("--set", action="append", metavar="KEY=VALUE")
    b.add_argument("--model", choices=("eat-s", "eat-m"), default="eat-s")
    b.add_argument("--num-classes", type=int, default=50)
    b.add_argument("--durations", default="1,5,10")
    b.add_argument("--sample-rate", type=int, default=22050)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--out", help="CSV path (stdout when omitted)")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="phase-only or magnitude-only resynthesis")
    s.add_argument("--mode", choices=("phase", "magnitude"), required=True)
    s.add_argument("--n-fft", type=int, default=1024)
    s.add_argument("--hop", type=int)
    s.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, WavError) as e:
        print(f"eat {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ConfigError, KeyError) as e:
        print(f"eat {args.command}: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (FloatingPointError, RuntimeError) as e:
        print(f"eat {args.command}: failed: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
