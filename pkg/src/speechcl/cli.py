"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data error (missing/corrupt files,
id mismatches), 3 numeric failure (non-finite values, failed gradient
checks).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import AUGMENTATION_NAMES, NoiseBank, add_noise, pitch_shift, reverberate, speed_perturb
from .autodiff import NumericError
from .config import ConfigError, RunConfig, config_to_dict, dump_config, load_config
from .dsp import UnsupportedWavError, WavFormatError, read_wav, write_wav
from .features import CmvnStats, apply_cmvn, fbank, normalize_per_utterance
from .model import EncoderConfig, encode, init_params, project, reconstruct
from .objective import ContrastiveBatch, nt_xent, recon_l1
from .probe import LabelMismatchError, read_labels, train_probe, write_report_csv
from .synth import generate_dataset
from .tensorio import ContainerError, read_tensors, write_tensors
from .trainer import (
    CheckpointNameError,
    Trainer,
    extract_features,
    load_checkpoint,
    load_wav_dir,
)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract is exit 1
        raise UsageError(message)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for name in ("epochs", "batch_size", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    try:
        if overrides:
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **overrides))
        if getattr(args, "seed", None) is not None:
            cfg = dataclasses.replace(cfg, synth=dataclasses.replace(cfg.synth, seed=args.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_config(args) -> int:
    if args.action == "show-defaults":
        print(dump_config(RunConfig()))
        return 0
    raise UsageError(f"unknown config action {args.action!r}")


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    synth_cfg = cfg.synth
    if args.classes is not None:
        synth_cfg = dataclasses.replace(synth_cfg, num_classes=args.classes)
    if args.per_class is not None:
        synth_cfg = dataclasses.replace(synth_cfg, per_class=args.per_class)
    try:
        manifest = generate_dataset(synth_cfg, args.out, cfg.frontend)
    except RuntimeError as exc:
        raise DataError(str(exc)) from exc
    print(f"wrote {manifest['num_utterances']} utterances to {args.out} "
          f"(oracle CV accuracy {manifest['oracle_cv_accuracy']:.3f})")
    return 0


def cmd_augment(args) -> int:
    w = read_wav(args.input)
    rng = np.random.default_rng(args.seed)
    if args.op == "pitch":
        if args.cents is None:
            raise UsageError("--cents is required for --op pitch")
        out = pitch_shift(w, args.cents)
    elif args.op == "speed":
        if args.factor is None:
            raise UsageError("--factor is required for --op speed")
        out = speed_perturb(w, args.factor)
    elif args.op == "noise":
        if args.noise_file is None or args.snr is None:
            raise UsageError("--noise-file and --snr are required for --op noise")
        out, scaled = add_noise(w, read_wav(args.noise_file), args.snr, rng)
        if not scaled:
            print("warning: zero-power input, noise mixing skipped", file=sys.stderr)
    elif args.op == "reverb":
        out = reverberate(w, args.reverberance, args.damping, args.room_scale)
    else:
        raise UsageError(f"unknown augmentation op {args.op!r}")
    write_wav(out, args.output)
    return 0


def cmd_fbank(args) -> int:
    cfg = _load_run_config(args)
    dataset = load_wav_dir(args.input)
    entries = {}
    stats = None
    if cfg.frontend.cmvn == "speaker":
        stats = CmvnStats()
        for utt, w in dataset:
            stats.add(fbank(w, cfg.frontend, utterance_id=utt))
    for utt, w in dataset:
        f = fbank(w, cfg.frontend, utterance_id=utt)
        if cfg.frontend.cmvn == "utterance":
            f = normalize_per_utterance(f)
        elif cfg.frontend.cmvn == "speaker":
            f = apply_cmvn(f, stats)
        entries[utt] = f.values
    write_tensors(args.out, entries)
    print(f"wrote {len(entries)} feature matrices to {args.out}")
    return 0


def _trainer_from_config(cfg: RunConfig) -> Trainer:
    if cfg.paths.data_dir is None:
        raise UsageError("config paths.data_dir is required for pretraining")
    dataset = load_wav_dir(cfg.paths.data_dir)
    bank = None
    if cfg.augment.enable_noise:
        noise_dir = cfg.paths.noise_dir
        if noise_dir is None:
            candidate = Path(cfg.paths.data_dir).parent / "noise"
            noise_dir = candidate if candidate.is_dir() else None
        if noise_dir is None:
            raise DataError("additive noise enabled but no noise_dir configured or found")
        bank = NoiseBank.from_dir(noise_dir)
        if len(bank) == 0:
            raise DataError(f"noise bank {noise_dir} holds no wav files")
    return Trainer(dataset, cfg.encoder, cfg.train, cfg.augment, cfg.alteration, cfg.frontend, bank)


def cmd_pretrain(args) -> int:
    cfg = _load_run_config(args)
    if args.epochs is not None and args.epochs < 1:
        raise UsageError(f"--epochs must be >= 1, got {args.epochs}")
    out_dir = Path(args.out if args.out else cfg.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = _trainer_from_config(cfg)
    trainer.train(metrics_path=out_dir / "metrics.jsonl", checkpoint_dir=out_dir, quiet=args.quiet)
    ckpt = out_dir / "checkpoint.sscn"
    trainer.save(ckpt)
    last = trainer.metrics[-1] if trainer.metrics else {}
    print(f"trained {trainer.step} steps; final loss {last.get('loss', float('nan')):.4f}; checkpoint {ckpt}")
    return 0


def cmd_extract(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _load_run_config(args)
    dataset = load_wav_dir(args.data)
    count = extract_features(ckpt.params, dataset, cfg.frontend, args.out)
    print(f"extracted {count} utterances to {args.out}")
    return 0


def cmd_probe(args) -> int:
    cfg = _load_run_config(args)
    try:
        features = read_tensors(args.features)
        labels = read_labels(args.labels)
        report = train_probe(features, labels, cfg.probe)
    except LabelMismatchError as exc:
        raise DataError(str(exc)) from exc
    print(f"train accuracy {report.train_accuracy:.4f}  test accuracy {report.test_accuracy:.4f}")
    if args.report:
        report.to_json(args.report)
    return 0


def cmd_gradcheck(args) -> int:
    rows, worst = gradcheck_report(seed=args.seed)
    for row in rows:
        print(f"{row['parameter']:24s} max_rel_err {row['max_rel_err']:.3e}  {row['status']}")
    print(f"worst relative error {worst:.3e}")
    if args.report:
        write_report_csv(args.report, rows)
    if any(row["status"] == "FAIL" for row in rows):
        raise NumericError(f"gradient check failed (worst relative error {worst:.3e})")
    return 0


def gradcheck_report(seed: int = 0, rtol: float = 1e-4, atol: float = 1e-6):
    """Finite-difference check of every parameter of a small encoder.

    Returns (rows, worst_error): one row per parameter tensor with the
    worst-case discrepancy between analytic and central-difference
    gradients of the combined loss.
    """
    cfg = EncoderConfig(num_layers=2, d_model=16, d_ff=32, num_heads=2, input_dim=80, d_proj=8, max_positions=64)
    params = init_params(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(4, 7, 80))
    target = rng.normal(size=(4, 7, 80))

    def loss_value() -> ad.DiffTensor:
        h = encode(ad.DiffTensor(x), params)
        z = project(h, params)
        ntx = nt_xent(ContrastiveBatch(z, 0.1))
        rec = recon_l1(reconstruct(h, params), ad.DiffTensor(target))
        return ntx + rec

    base = loss_value()
    params.zero_grads()
    base.backward()
    rows = []
    worst = 0.0
    for name, p in params.trainable_items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)

        def f(values, p=p):
            saved = p.data
            p.data = values
            try:
                return float(loss_value().data)
            finally:
                p.data = saved

        numeric = ad.numeric_gradient(f, p.data)
        err = ad.max_gradient_error(analytic, numeric)
        ok = ad.gradient_close(analytic, numeric, rtol=rtol, atol=atol)
        worst = max(worst, err)
        rows.append({"parameter": name, "max_rel_err": err, "status": "ok" if ok else "FAIL"})
    return rows, worst


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    toggles = [t.strip() for t in args.toggles.split(",") if t.strip()] if args.toggles else []
    for t in toggles:
        if t not in AUGMENTATION_NAMES:
            raise UsageError(f"unknown toggle {t!r}; choose from {AUGMENTATION_NAMES}")
    out_dir = Path(args.out if args.out else cfg.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    baseline = None
    for label, aug_cfg in [("all_on", cfg.augment)] + [(f"-{t}", cfg.augment.disabled(t)) for t in toggles]:
        variant = dataclasses.replace(cfg, augment=aug_cfg)
        accuracy = _pretrain_probe_accuracy(variant, out_dir / label.replace("-", "off_"))
        if baseline is None:
            baseline = accuracy
        rows.append({"toggle": label, "probe_accuracy": round(accuracy, 4),
                     "delta_vs_all_on": round(accuracy - baseline, 4)})
        print(f"{label:16s} accuracy {accuracy:.4f}")
    report = out_dir / "ablation.csv"
    write_report_csv(report, rows)
    print(f"wrote {report}")
    return 0


def _pretrain_probe_accuracy(cfg: RunConfig, work_dir: Path) -> float:
    work_dir.mkdir(parents=True, exist_ok=True)
    trainer = _trainer_from_config(cfg)
    trainer.train(metrics_path=work_dir / "metrics.jsonl")
    ckpt = work_dir / "checkpoint.sscn"
    trainer.save(ckpt)
    features_path = work_dir / "features.sscn"
    extract_features(trainer.params, trainer.dataset, cfg.frontend, features_path)
    labels = read_labels(Path(cfg.paths.data_dir).parent / "labels.csv")
    report = train_probe(read_tensors(features_path), labels, cfg.probe)
    return report.test_accuracy


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="speechcl", description="contrastive speech representation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="configuration utilities")
    p.add_argument("action", choices=["show-defaults"])
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="apply one named augmentation to a wav")
    p.add_argument("--op", required=True, choices=["pitch", "speed", "noise", "reverb"])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--cents", type=int)
    p.add_argument("--factor", type=float)
    p.add_argument("--snr", type=float)
    p.add_argument("--noise-file", dest="noise_file")
    p.add_argument("--reverberance", type=float, default=50.0)
    p.add_argument("--damping", type=float, default=50.0)
    p.add_argument("--room-scale", dest="room_scale", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("fbank", help="extract filterbank features for a wav directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_fbank)

    p = sub.add_parser("pretrain", help="run self-supervised pretraining")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("extract", help="dump encoder outputs for a wav directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("probe", help="linear-probe a feature archive")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--config")
    p.add_argument("--report")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="pretrain+probe with augmentations toggled off one at a time")
    p.add_argument("--config")
    p.add_argument("--toggles", default=",".join(AUGMENTATION_NAMES))
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, WavFormatError, UnsupportedWavError, ContainerError, CheckpointNameError,
            LabelMismatchError, ConfigError, FileNotFoundError, LookupError, ad.ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
