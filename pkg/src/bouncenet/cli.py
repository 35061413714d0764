"""Command-line entry point: generate, train, eval, predict, experiment.

Exit codes::

    0  success
    2  usage error (bad flag or flag value)
    3  I/O error (missing or unwritable file)
    4  data error (malformed CSV, manifest or checkpoint)
    5  dims mismatch between checkpoint and request/input
    6  simulation or training failure
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import zipfile
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .dataset import (CLASS_NAMES, DatasetManifest, GeneratorConfig, TrajectoryFormatError,
                      generate_dataset, load_external_trajectory)
from .experiments import (DIM_ABLATION, EXPERIMENTS, SWEEP_LENGTHS, ExperimentError,
                          emit_report, run_dimension_ablation, run_length_sweep)
from .physics import SimConfig, SimulationError
from .training import (Checkpoint, DimsMismatchError, TrainConfig, TrainingError, evaluate,
                       predict, train, write_metrics_csv)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_DIMS = 5
EXIT_RUNTIME = 6

log = logging.getLogger("bouncenet")


class UsageError(ValueError):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _window(text):
    if text == "full":
        return "full"
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("window must be >= 0 or 'full'")
    return value


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON config ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def _merge(cls, section: dict, flags: dict, name: str):
    """defaults < config-file section < explicit flags."""
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"unknown {name} config keys: {sorted(unknown)}")
    merged = dict(section)
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {name} setting: {exc}") from exc


def _train_flags(args) -> dict:
    window = getattr(args, "window", None)
    flags = {
        "epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr,
        "target_len": args.target_len, "seed": getattr(args, "seed", None),
        "early_stop_patience": args.patience, "hidden_size": args.hidden,
        "dropout_rate": args.dropout, "dims": getattr(args, "dims", None),
    }
    if window is not None:
        flags["truncation_window"] = None if window == "full" else window
    return flags


def _train_config(args, cfg_file: dict) -> TrainConfig:
    section = dict(cfg_file.get("train", {}))
    if section.get("truncation_window") == "full":
        section["truncation_window"] = None
    return _merge(TrainConfig, section, _train_flags(args), "train")


def _add_train_flags(p, with_seed=True, with_dims=True):
    g = p.add_argument_group("training")
    if with_dims:
        g.add_argument("--dims", choices=("xyz", "z"), help="input channels (default xyz)")
    g.add_argument("--epochs", type=int, help="maximum epochs (default 100)")
    g.add_argument("--batch-size", type=_positive_int, help="mini-batch size (default 32)")
    g.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    g.add_argument("--window", type=_window, help="truncated BPTT window or 'full' (default 64)")
    g.add_argument("--target-len", type=_positive_int, help="padded length in frames (default 120)")
    if with_seed:
        g.add_argument("--seed", type=int, help="training seed (default 0)")
    g.add_argument("--patience", type=int, help="early-stop patience in epochs (default 15)")
    g.add_argument("--hidden", type=_positive_int, help="LSTM units per layer (default 64)")
    g.add_argument("--dropout", type=float, help="dropout probability on the head input (default 0.8)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bouncenet",
                                     description="Synthetic bounce trajectories and an LSTM classifier.")
    parser.add_argument("--config", help="JSON file with 'generator', 'sim', 'train' sections")
    parser.add_argument("--workers", type=_positive_int, default=1,
                        help="worker processes for generation/experiments (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("generate", help="simulate a labeled train/test corpus")
    p.add_argument("--n-train", type=_positive_int, required=True, help="training trajectories per class")
    p.add_argument("--n-test", type=_positive_int, required=True, help="test trajectories per class")
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--null-signal", action="store_true",
                   help="give both labels the light material ranges (control corpus)")
    p.add_argument("--gravity", type=float, help="m/s^2 (default 9.81)")
    p.add_argument("--max-frames", type=_positive_int, help="frame cap per trajectory (default 240)")
    p.add_argument("--light-restitution", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--heavy-restitution", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--friction", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--height", type=float, nargs=2, metavar=("LO", "HI"))

    p = sub.add_parser("train", help="train a classifier on a generated corpus")
    p.add_argument("--data", required=True, help="dataset directory (with manifest.json)")
    p.add_argument("--out", required=True, help="output directory for checkpoint and metrics")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="test-split accuracy of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--dims", choices=("xyz", "z"), help="fail unless the checkpoint uses these dims")

    p = sub.add_parser("predict", help="classify one trajectory CSV")
    p.add_argument("--input", required=True, help="CSV with z, x,y,z or frame,x,y,z columns")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame-rate", type=float, default=24.0)

    p = sub.add_parser("experiment", help="run an ablation or length sweep and write reports")
    p.add_argument("--name", choices=EXPERIMENTS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=_positive_int, default=3, help="number of seeds, 0..N-1 (default 3)")
    p.add_argument("--lengths", type=_positive_int, nargs="+", default=None,
                   help=f"sweep lengths in frames (default {' '.join(map(str, SWEEP_LENGTHS))})")
    _add_train_flags(p, with_seed=False)
    return parser


def _range_flags(args) -> dict:
    out = {}
    for name in ("light_restitution", "heavy_restitution", "friction", "height"):
        value = getattr(args, name)
        if value is not None:
            out[name] = tuple(value)
    return out


def cmd_generate(args, cfg_file) -> int:
    section = {k: tuple(v) if isinstance(v, list) else v
               for k, v in cfg_file.get("generator", {}).items()}
    gen = _merge(GeneratorConfig, section, _range_flags(args), "generator")
    if args.null_signal:
        gen = GeneratorConfig.null_signal(**asdict(gen))
    sim = _merge(SimConfig, cfg_file.get("sim", {}),
                 {"gravity": args.gravity, "max_frames": args.max_frames}, "sim")
    manifest = generate_dataset(args.n_train, args.n_test, args.seed, args.out, gen, sim,
                                workers=args.workers)
    counts = manifest.counts
    print(f"wrote {len(manifest.entries)} trajectories to {manifest.root}")
    for split in ("train", "test"):
        print(f"  {split}: " + ", ".join(f"{CLASS_NAMES[k]}={v}" for k, v in counts[split].items()))
    lengths = [e["n_frames"] for e in manifest.entries]
    print(f"  frames per trajectory: min {min(lengths)}, mean {np.mean(lengths):.1f}, max {max(lengths)}")
    print(f"  config hash: {manifest.config_hash}")
    return EXIT_OK


def cmd_train(args, cfg_file) -> int:
    config = _train_config(args, cfg_file)
    manifest = DatasetManifest.load(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(manifest, config)
    result.checkpoint.save(out / "model.ckpt")
    write_metrics_csv(result.history, out / "metrics.csv")
    ck = result.checkpoint
    if not result.history:
        chosen = "no epochs run, initial weights"
    elif np.isnan(ck.val_acc):
        chosen = f"train acc {result.history[ck.epoch - 1].train_acc:.4f}, no validation split"
    else:
        chosen = f"val acc {ck.val_acc:.4f}"
    print(f"epochs run: {len(result.history)}; best epoch {ck.epoch} ({chosen})")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args, cfg_file) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    manifest = DatasetManifest.load(args.data)
    result = evaluate(ckpt, manifest, args.split, args.dims)
    print(f"accuracy: {result.accuracy:.6f} ({result.n} trajectories, dims {ckpt.dims})")
    print("confusion (rows true, cols predicted; heavy, light):")
    for row in result.confusion:
        print("  " + " ".join(f"{v:6d}" for v in row))
    return EXIT_OK


def cmd_predict(args, cfg_file) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    traj = load_external_trajectory(args.input, args.frame_rate)
    label, probs = predict(ckpt, traj)
    print(f"class: {CLASS_NAMES[label]}")
    print(f"p(heavy)={probs[0]:.6f} p(light)={probs[1]:.6f}")
    return EXIT_OK


def cmd_experiment(args, cfg_file) -> int:
    base = _train_config(args, cfg_file)
    manifest = DatasetManifest.load(args.data)
    seeds = list(range(args.seeds))
    if args.name == DIM_ABLATION:
        report = run_dimension_ablation(manifest, base, seeds, workers=args.workers)
    else:
        report = run_length_sweep(manifest, base, args.lengths or SWEEP_LENGTHS, seeds,
                                  workers=args.workers)
    paths = emit_report(report, args.out)
    for x, mean, std, n in report.summary():
        print(f"{x}: mean accuracy {mean:.4f} (std {std:.4f}, n={n})")
    print(f"report: {paths['table']}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg_file = _load_config_file(args.config)
        return COMMANDS[args.command](args, cfg_file)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DimsMismatchError as exc:
        print(f"error: dims mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMS
    except (TrajectoryFormatError, zipfile.BadZipFile, KeyError, ValueError) as exc:
        print(f"error: bad data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, ExperimentError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
