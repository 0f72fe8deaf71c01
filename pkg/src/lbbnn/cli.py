"""Command-line entry point: ``lbbnn {train,eval,classify,logreg-sim,uncertainty}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .autodiff import NonFiniteError
from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .data import DataError
from .network import METHODS
from .training import TrainingDiverged

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SELECTION_METHODS = ("lbbnn-lrt", "lbbnn-flow")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lbbnn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and write checkpoint and history")
    _common(p)
    p.add_argument("--dataset", choices=("mnist", "logreg", "clusters"), default=None,
                   help="dataset preset used when no config is given (default mnist)")

    p = sub.add_parser("eval", help="score a checkpoint on a labelled IDX dataset")
    _common(p)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--images", type=Path, help="IDX image file (default: config validation set)")
    p.add_argument("--labels", type=Path, help="IDX label file")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--mode", choices=("full", "median"), default="full")

    p = sub.add_parser("classify", help="repeated MNIST fits scored on the validation set")
    _common(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--method", choices=METHODS)

    p = sub.add_parser("logreg-sim", help="variable selection on simulated logistic data")
    _common(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--method", action="append", choices=SELECTION_METHODS,
                   help="repeatable; default both spike-and-slab methods")

    p = sub.add_parser("uncertainty", help="predictive uncertainty on Gaussian clusters")
    _common(p)
    p.add_argument("--samples-per-class", type=int, choices=(10, 50, 200))
    p.add_argument("--method", action="append", choices=METHODS,
                   help="repeatable; default all four methods")
    return ap


def _config(args, dataset: str) -> ExperimentConfig:
    base = ex.DEFAULTS[dataset]()
    cfg = load_config(args.config, base) if args.config else base
    return cfg.replace(seed=args.seed, output_dir=str(args.out) if args.out else None)


def _dispatch(args) -> dict:
    if args.command == "train":
        dataset = args.dataset or (load_config(args.config).dataset if args.config else "mnist")
        cfg = _config(args, dataset).replace(dataset=dataset)
        return ex.run_train(cfg, cfg.output_dir)
    if args.command == "eval":
        cfg = _config(args, "mnist")
        if not args.checkpoint.exists():
            raise DataError(f"checkpoint not found: {args.checkpoint}")
        try:
            model, _ = load_checkpoint(args.checkpoint)
        except (ValueError, KeyError, OSError) as exc:
            raise DataError(f"unreadable checkpoint {args.checkpoint}: {exc}") from None
        images = args.images or cfg.data.get("val_images")
        labels = args.labels or cfg.data.get("val_labels")
        try:
            ds = ex.load_idx_dataset(images, labels)
        except FileNotFoundError as exc:
            raise DataError(f"missing data file: {exc.filename}") from None
        if args.samples < 1:
            raise ConfigError("--samples must be at least 1")
        return ex.run_eval(model, ds, args.samples, args.mode, cfg.seed, cfg.output_dir, cfg)
    if args.command == "classify":
        cfg = _config(args, "mnist").replace(repetitions=args.reps, method=args.method)
        return ex.run_classification(cfg, cfg.output_dir)
    if args.command == "logreg-sim":
        cfg = _config(args, "logreg").replace(repetitions=args.reps)
        return ex.run_logreg_sim(cfg, args.method or list(SELECTION_METHODS), cfg.output_dir)
    if args.command == "uncertainty":
        cfg = _config(args, "clusters")
        if args.samples_per_class:
            cfg = cfg.replace(data={**cfg.data, "samples_per_class": args.samples_per_class})
        return ex.run_uncertainty(cfg, args.method or list(METHODS), cfg.output_dir)
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"numerical failure in {exc.component}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
