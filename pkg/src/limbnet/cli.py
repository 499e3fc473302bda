"""``limbnet`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from limbnet import dataset as ds
from limbnet.config import RunConfig, build_run_config, check_weights_match
from limbnet.errors import ConfigError, LimbnetError, ValidationError
from limbnet.experiment import evaluation_report, run_experiment, write_report
from limbnet.model import Predictor, build_model, load_weights, parameter_count, save_weights
from limbnet.pipeline import SplitPlan, make_split, window_offsets
from limbnet.train import latency_benchmark

log = logging.getLogger("limbnet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(ValidationError):
    pass


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's parser from resetting a flag given before the subcommand
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="INI-style run configuration")
    p.add_argument("--seed", type=int, help="seed for initialisation, shuffling and dropout")
    p.add_argument("--out-dir", type=Path, help="directory for outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", type=Path, help="dataset manifest CSV")
    p.add_argument("--split", type=Path, dest="split_file", help="split JSON from 'limbnet split'")


def _window_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, help="window length in samples (default 256)")
    p.add_argument("--stride", type=int, help="window stride in samples (default 192)")


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="limbnet", parents=[common],
                                     description="Attention CNN for lower-limb sEMG activity "
                                                 "recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", parents=[common], help="leave-one-subject-out split file")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--val", help="validation pair HEALTHY_ID,ABNORMAL_ID")
    p.add_argument("--test", help="test pair HEALTHY_ID,ABNORMAL_ID")
    p.add_argument("--output", type=Path, help="split file (default OUT_DIR/split.json)")

    p = sub.add_parser("train", parents=[common], help="train, evaluate and write a report")
    _data_flags(p)
    _window_flags(p)
    p.add_argument("--val", help="validation pair (when no --split file is given)")
    p.add_argument("--test", help="test pair (when no --split file is given)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--denoise", action="store_true", default=None,
                   help="wavelet-denoise recordings before windowing")
    p.add_argument("--latency-iters", type=int, help="benchmark iterations in the report")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("evaluate", parents=[common], help="score a weight file on one partition")
    _data_flags(p)
    p.add_argument("--val", help="validation pair (when no --split file is given)")
    p.add_argument("--test", help="test pair (when no --split file is given)")
    p.add_argument("--stride", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--weights", type=Path)
    p.add_argument("--partition", choices=["train", "val", "test"], default="test")
    p.add_argument("--denoise", action="store_true", default=None)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("predict", parents=[common], help="classify every window of a CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--weights", type=Path)
    p.add_argument("--stride", type=int)
    p.add_argument("--denoise", action="store_true", default=None)

    p = sub.add_parser("bench", parents=[common], help="single-window inference latency")
    p.add_argument("--weights", type=Path, help="weight file (default: fresh default model)")
    p.add_argument("--n-iters", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64")

    p = sub.add_parser("convert", parents=[common], help="vendor CSV -> canonical CSV")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    for ch in ds.CHANNELS:
        p.add_argument(f"--{ch}", required=True, metavar="COLUMN",
                       help=f"source column holding {ch.upper()}")
    p.add_argument("--time", metavar="COLUMN")
    p.add_argument("--angle", metavar="COLUMN")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset + manifest")
    p.add_argument("--subjects", type=int, default=22)
    p.add_argument("--samples", type=int, default=2560, help="samples per recording")
    p.add_argument("--noise", type=float)

    p = sub.add_parser("params", parents=[common], help="parameter count breakdown")
    _window_flags(p)
    return parser


def _run_config(args) -> RunConfig:
    overrides = {
        "general.seed": getattr(args, "seed", None),
        "paths.out_dir": getattr(args, "out_dir", None),
        "paths.manifest": getattr(args, "manifest", None),
        "paths.split": getattr(args, "split_file", None),
        "paths.weights": getattr(args, "weights", None),
        "split.val": getattr(args, "val", None),
        "split.test": getattr(args, "test", None),
        "pipeline.window": getattr(args, "window", None),
        "pipeline.stride": getattr(args, "stride", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "denoise.enabled": "true" if getattr(args, "denoise", None) else None,
        "general.latency_iters": getattr(args, "latency_iters", None),
    }
    return build_run_config(getattr(args, "config", None), overrides)


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required (flag or config file)")
    return value


def _load_dataset(run: RunConfig) -> ds.Dataset:
    return ds.load_dataset(_require(run.manifest, "--manifest"), label_map=run.label_map)


def _resolve_split(run: RunConfig, dataset: ds.Dataset) -> SplitPlan:
    if run.split_file:
        plan = SplitPlan.load(run.split_file)
        known = set(dataset.subjects())
        for sid in plan.train_subjects + plan.val_subjects + plan.test_subjects:
            if sid not in known:
                raise ValidationError(f"split names subject {sid}, which is not in the manifest")
        return plan
    return make_split(dataset, _require(run.val_pair, "--val"), _require(run.test_pair, "--test"))


# ---------------------------------------------------------------- commands

def cmd_split(args) -> int:
    run = _run_config(args)
    dataset = _load_dataset(run)
    plan = make_split(dataset, _require(run.val_pair, "--val"), _require(run.test_pair, "--test"))
    out = args.output or run.out_dir / "split.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    plan.save(out)
    print(f"train={len(plan.train_subjects)} val={len(plan.val_subjects)} "
          f"test={len(plan.test_subjects)} -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _run_config(args)
    dataset = _load_dataset(run)
    split = _resolve_split(run, dataset)
    print(parameter_count(run.model).format())
    epochs = run.train.epochs

    def on_epoch(s):
        val = "" if s.val_loss is None else \
            f" val_loss={s.val_loss:.4f} val_acc={100 * s.val_accuracy:.2f}%"
        print(f"epoch {s.epoch}/{epochs} train_loss={s.train_loss:.4f} "
              f"train_acc={100 * s.train_accuracy:.2f}%{val}", flush=True)

    weights, report = run_experiment(dataset, split, run.model, run.train, run.stride,
                                     run.latency_iters, on_epoch)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    weights_path = run.weights or run.out_dir / "weights.bin"
    save_weights(weights, weights_path)
    write_report(report, run.out_dir / "report.json")
    if not args.no_figures:
        from limbnet.plotting import render_report_figures
        render_report_figures(report, run.out_dir / "figures")
    tm, vm = report["test_metrics"], report["val_metrics"]
    print(f"val accuracy={vm['accuracy']:.2f}% test accuracy={tm['accuracy']:.2f}% "
          f"balanced={tm['balanced_accuracy']:.2f}% denoise={run.train.denoise.enabled}")
    print(f"weights -> {weights_path}\nreport -> {run.out_dir / 'report.json'}")
    return EXIT_OK


def _load_checked_weights(run: RunConfig):
    weights = load_weights(_require(run.weights, "--weights"))
    check_weights_match(run, weights.config)
    return weights


def cmd_evaluate(args) -> int:
    run = _run_config(args)
    weights = _load_checked_weights(run)
    dataset = _load_dataset(run)
    split = _resolve_split(run, dataset)
    report = evaluation_report(weights, dataset, split, args.partition, run.stride,
                               run.train.denoise)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    out = run.out_dir / f"eval_{args.partition}.json"
    write_report(report, out)
    if not args.no_figures:
        from limbnet.plotting import render_evaluation_figures
        render_evaluation_figures(report, run.out_dir / "figures")
    m = report["metrics"]
    print(f"partition={args.partition} frames={report['n_frames']} "
          f"accuracy={m['accuracy']:.2f}% balanced_accuracy={m['balanced_accuracy']:.2f}%")
    print(f"report -> {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    run = _run_config(args)
    weights = _load_checked_weights(run)
    semg, _ = ds.read_semg_csv(args.csv)
    if run.train.denoise.enabled:
        from limbnet.pipeline import denoise_recording
        rec = ds.Recording(ds.SubjectMeta("predict", "healthy"), ds.ACTIVITIES[0], semg)
        semg = denoise_recording(rec, run.train.denoise).semg
    predictor = Predictor(weights)
    window = weights.config.window_len
    out = sys.stdout
    for offset in window_offsets(semg.shape[1], window, run.stride):
        probs = predictor(semg[:, offset:offset + window])
        cls = int(np.argmax(probs))
        out.write(f"{offset},{cls}," + ",".join(f"{p:.10f}" for p in probs) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.n_iters < 1:
        raise UsageError("--n-iters must be >= 1")
    run = _run_config(args)
    weights = _load_checked_weights(run) if run.weights else build_model(run.model)
    stats = latency_benchmark(weights, args.n_iters, args.warmup, np.random.default_rng(run.seed),
                              dtype=np.dtype(args.dtype))
    host = stats.pop("host")
    for key, val in stats.items():
        print(f"{key}={val}")
    for key, val in host.items():
        print(f"host_{key}={val}")
    return EXIT_OK


def cmd_convert(args) -> int:
    mapping = {ch: getattr(args, ch) for ch in ds.CHANNELS}
    n = ds.convert_csv(args.input, args.output, mapping, args.time, args.angle)
    print(f"{n} samples -> {args.output}")
    return EXIT_OK


def cmd_synth(args) -> int:
    run = _run_config(args)
    params = ds.SignatureParams() if args.noise is None else ds.SignatureParams(noise=args.noise)
    data = ds.generate_synthetic_dataset(args.subjects, args.samples, params,
                                         np.random.default_rng(run.seed))
    manifest = ds.write_dataset(data, run.out_dir)
    print(f"{len(data.recordings)} recordings -> {manifest}")
    return EXIT_OK


def cmd_params(args) -> int:
    run = _run_config(args)
    print(parameter_count(run.model).format())
    return EXIT_OK


COMMANDS = {"split": cmd_split, "train": cmd_train, "evaluate": cmd_evaluate,
            "predict": cmd_predict, "bench": cmd_bench, "convert": cmd_convert,
            "synth": cmd_synth, "params": cmd_params}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ConfigError) as exc:
        print(f"limbnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LimbnetError, OSError, json.JSONDecodeError) as exc:
        print(f"limbnet {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
