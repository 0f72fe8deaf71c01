"""Reproducible experiment drivers behind the command-line tool.

Each driver takes an :class:`ExperimentConfig`, writes plot-ready CSV files
into an output directory together with a ``manifest.json`` (config echo,
seed and content hashes), and returns a small summary dict.

Repetition ``r`` of a run with base seed ``s`` uses seed ``s + r``; its
initialisation, training and evaluation draw from separate derived seeds,
so repetitions can run concurrently in any order. Classification draws
fresh data per repetition, while the variable-selection study refits one
dataset drawn from the base seed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .data import (BETA, Dataset, DataError, gen_clusters, gen_logreg, grid,
                   load_idx_dataset)
from .metrics import accuracy, cumulative_accuracy, ood_threshold, predict_avg, tpr_fpr
from .network import build_model
from .rng import RngStream, derive_seed
from .training import train, write_history

log = logging.getLogger(__name__)

THREADS_ENV = "LBBNN_THREADS"
DATA, INIT, TRAIN, EVAL = range(4)

MNIST_DIR = Path("data") / "mnist"


def classification_defaults() -> ExperimentConfig:
    return ExperimentConfig(
        method="lbbnn-flow", dataset="mnist",
        data={"train_images": str(MNIST_DIR / "train-images-idx3-ubyte.gz"),
              "train_labels": str(MNIST_DIR / "train-labels-idx1-ubyte.gz"),
              "val_images": str(MNIST_DIR / "val-images-idx3-ubyte.gz"),
              "val_labels": str(MNIST_DIR / "val-labels-idx1-ubyte.gz")},
        hidden=[400, 600], prior_alpha=0.1, flow_hidden=[250, 250],
        base_mean=1.0, base_sigma=0.1,
        # inclusion starts committed so the means can learn before pruning sets in
        init={"logit_low": 1.0, "logit_high": 2.0},
        epochs=20, batch_size=100, learning_rate=1e-3, eval_samples=100,
        output_dir="runs/classification")


def logreg_defaults() -> ExperimentConfig:
    return ExperimentConfig(
        method="lbbnn-flow", dataset="logreg", data={"n": 2000},
        hidden=[], prior_alpha=0.25, flow_hidden=[100, 100],
        base_mean=1.0, base_sigma=0.1,
        epochs=500, batch_size=400, learning_rate=1e-2, repetitions=20,
        output_dir="runs/logreg")


def uncertainty_defaults() -> ExperimentConfig:
    return ExperimentConfig(
        method="lbbnn-flow", dataset="clusters",
        data={"samples_per_class": 10, "test_per_class": 2000},
        hidden=[1000], prior_alpha=0.5, flow_hidden=[50, 50], p_drop=0.5,
        base_mean=1.0, base_sigma=0.1,
        init={"logit_low": 1.0, "logit_high": 2.0},
        epochs=1000, batch_size=50, learning_rate=1e-2, eval_samples=10,
        output_dir="runs/uncertainty")


DEFAULTS = {"mnist": classification_defaults, "logreg": logreg_defaults,
            "clusters": uncertainty_defaults}


# -- output plumbing ------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    """RFC 4180 CSV: CRLF line endings, one header line, exact float reprs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, extra: dict | None = None) -> Path:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            data = p.read_bytes()
            files[p.relative_to(out).as_posix()] = {
                "sha256": hashlib.sha256(data).hexdigest(), "git_blob": git_blob_hash(data)}
    manifest = {"command": command, "seed": cfg.seed, "config": cfg.to_dict(),
                "outputs": files, **(extra or {})}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def run_parallel(fn, items):
    """Map ``fn`` over ``items``, in threads if ``LBBNN_THREADS`` > 1; results keep order."""
    try:
        workers = int(os.environ.get(THREADS_ENV, "1"))
    except ValueError:
        workers = 1
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- datasets -------------------------------------------------------------------

def load_data(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset | None]:
    """Training set and (when the dataset has one) validation set."""
    d = cfg.data
    if cfg.dataset == "mnist":
        try:
            tr = load_idx_dataset(d["train_images"], d["train_labels"], limit=d.get("limit"))
            va = None
            if "val_images" in d and "val_labels" in d:
                va = load_idx_dataset(d["val_images"], d["val_labels"])
        except KeyError as exc:
            raise DataError(f"config data section lacks {exc}") from None
        except FileNotFoundError as exc:
            raise DataError(f"missing data file: {exc.filename}") from None
        return tr, va
    if cfg.dataset == "logreg":
        ds, _ = gen_logreg(d.get("n", 2000), seed=derive_seed(seed, DATA))
        return ds, None
    if cfg.dataset == "clusters":
        tr = gen_clusters(d.get("samples_per_class", 10), seed=derive_seed(seed, DATA))
        te = gen_clusters(d.get("test_per_class", 2000), seed=derive_seed(seed, DATA, 1),
                          scaling=tr.metadata["scaling"])
        return tr, te
    raise DataError(f"unknown dataset {cfg.dataset!r}")


def fit(cfg: ExperimentConfig, ds: Dataset, seed: int, checkpoint: Path | None = None):
    n_out = 1 if cfg.likelihood == "bernoulli" else ds.n_classes
    model = build_model(cfg.architecture(ds.features.shape[1], n_out), seed=derive_seed(seed, INIT))
    tc = cfg.train_config(seed, str(checkpoint) if checkpoint else None)
    batch = min(tc.batch_size, len(ds))
    tc.batch_size = batch
    _, history = train(model, ds.features, ds.labels, tc, RngStream(derive_seed(seed, TRAIN)))
    return model, history


# -- commands -------------------------------------------------------------------

def run_train(cfg: ExperimentConfig, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ds, _ = load_data(cfg, cfg.seed)
    ckpt = out / "checkpoint.npz"
    model, history = fit(cfg, ds, cfg.seed, ckpt if cfg.checkpoint_every else None)
    save_checkpoint(model, ckpt, seed=derive_seed(cfg.seed, INIT),
                    extra={"config": cfg.to_dict()})
    write_history(history, out / "history.csv")
    write_manifest(out, "train", cfg)
    return {"epochs": len(history), "final_total": history[-1]["total"] if history else None,
            "density": model.density()}


def evaluate(model, ds: Dataset, samples: int, mode: str, seed: int) -> dict:
    summary = predict_avg(model, ds.features, samples, mode, RngStream(derive_seed(seed, EVAL)),
                          batch_size=2000)
    return {"accuracy": accuracy(summary, ds.labels), "density": model.density()}


def run_eval(model, ds: Dataset, samples: int, mode: str, seed: int, out,
             cfg: ExperimentConfig) -> dict:
    out = Path(out)
    res = evaluate(model, ds, samples, mode, seed)
    write_csv(out / "eval.csv", ["samples", "mode", "accuracy", "density"],
              [[samples, mode, res["accuracy"], res["density"]]])
    write_manifest(out, "eval", cfg)
    return res


def run_classification(cfg: ExperimentConfig, out) -> dict:
    """Train ``repetitions`` models and score full averaging and the median model."""
    out = Path(out)

    def one(rep):
        seed = cfg.seed + rep
        tr, va = load_data(cfg, seed)
        if va is None:
            raise DataError("classification needs a validation set")
        model, history = fit(cfg, tr, seed)
        write_history(history, out / "reps" / f"history_{rep}.csv")
        full = evaluate(model, va, cfg.eval_samples, "full", seed)
        median = evaluate(model, va, cfg.eval_samples, "median", seed)
        return [rep, seed, full["accuracy"], median["accuracy"], full["density"]]

    rows = run_parallel(one, range(cfg.repetitions))
    write_csv(out / "classification.csv",
              ["run", "seed", "accuracy_full", "accuracy_median", "density"], rows)
    acc = np.array([r[2] for r in rows])
    summary = {"accuracy_full_min": float(acc.min()), "accuracy_full_median": float(np.median(acc)),
               "accuracy_full_max": float(acc.max()),
               "accuracy_median_model": float(np.median([r[3] for r in rows])),
               "density_mean": float(np.mean([r[4] for r in rows]))}
    write_csv(out / "summary.csv", list(summary), [list(summary.values())])
    write_manifest(out, "classification", cfg)
    return summary


def run_logreg_sim(cfg: ExperimentConfig, methods, out) -> dict:
    """Repeated variable-selection fits; per-run scores and inclusion counts per method.

    Every repetition refits the same simulated dataset (drawn from the base
    seed); repetitions differ in initialisation and mini-batch order only.
    """
    out = Path(out)
    ds, _ = load_data(cfg, cfg.seed)
    results = {}
    for method in methods:
        mcfg = cfg.replace(method=method)

        def one(rep, mcfg=mcfg, method=method):
            model, _ = fit(mcfg, ds, cfg.seed + rep)
            alpha = model.layers[0].alpha().data[:, 0]
            score = tpr_fpr(alpha, BETA)
            row = [rep, score.tpr, score.fpr, *score.included.astype(int)]
            write_csv(out / "reps" / f"selection_{method}_{rep}.csv", SELECTION_HEADER, [row])
            return row

        rows = run_parallel(one, range(cfg.repetitions))
        write_csv(out / f"selection_{method}.csv", SELECTION_HEADER, rows)
        counts = np.sum([r[3:] for r in rows], axis=0)
        write_csv(out / f"inclusion_{method}.csv", ["coordinate", "beta", "count"],
                  [[j, BETA[j], int(c)] for j, c in enumerate(counts)])
        results[method] = {"mean_tpr": float(np.mean([r[1] for r in rows])),
                           "mean_fpr": float(np.mean([r[2] for r in rows]))}
    write_csv(out / "summary.csv", ["method", "mean_tpr", "mean_fpr"],
              [[m, r["mean_tpr"], r["mean_fpr"]] for m, r in results.items()])
    write_manifest(out, "logreg-sim", cfg)
    return results


SELECTION_HEADER = ["run", "tpr", "fpr"] + [f"included_{j}" for j in range(20)]

GRID_RESOLUTION = 101
OOD_RESOLUTION = 100
FAR_DISTANCE = 0.3


def far_from(points: np.ndarray, reference: np.ndarray, distance: float) -> np.ndarray:
    """Mask of ``points`` farther than ``distance`` (Euclidean) from every reference row."""
    d2 = ((points[:, None, :] - reference[None, :, :]) ** 2).sum(axis=2)
    return d2.min(axis=1) > distance ** 2


def run_uncertainty(cfg: ExperimentConfig, methods, out) -> dict:
    """Entropy maps, confidence-sorted curves and pre-activation OOD flags per method."""
    out = Path(out)
    tr, te = load_data(cfg, cfg.seed)
    inner = grid(GRID_RESOLUTION, 0.0, 1.0)
    outer = grid(OOD_RESOLUTION, -1.0, 2.0)
    inner_ood = grid(OOD_RESOLUTION, 0.0, 1.0)
    far = far_from(inner, tr.features, FAR_DISTANCE)
    results = {}
    for method in methods:
        mcfg = cfg.replace(method=method)
        model, history = fit(mcfg, tr, cfg.seed)
        write_history(history, out / f"history_{method}.csv")
        eval_rng = RngStream(derive_seed(cfg.seed, EVAL))
        grid_rng, train_rng, test_rng, ood_rng, in_rng, out_rng = eval_rng.spawn(6)
        S = cfg.eval_samples

        g = predict_avg(model, inner, S, cfg.eval_mode, grid_rng)
        write_csv(out / f"entropy_grid_{method}.csv", ["x", "y", "entropy"],
                  [[x, y, h] for (x, y), h in zip(inner, g.entropy)])

        st = predict_avg(model, tr.features, S, cfg.eval_mode, train_rng)
        ste = predict_avg(model, te.features, S, cfg.eval_mode, test_rng)
        curve = cumulative_accuracy(ste, te.labels, window=100)
        write_csv(out / f"cumulative_accuracy_{method}.csv", ["window_index", "accuracy"],
                  list(enumerate(curve)))
        write_csv(out / f"sorted_{method}.csv", ["rank", "entropy", "max_prob"],
                  [[k, h, p] for k, (h, p) in enumerate(zip(np.sort(ste.entropy),
                                                            np.sort(ste.max_prob)[::-1]))])

        threshold = ood_threshold(model, tr.features, S, ood_rng, 0.95, cfg.eval_mode)
        flags_in = predict_avg(model, inner_ood, S, cfg.eval_mode, in_rng).max_preact > threshold
        flags_out = predict_avg(model, outer, S, cfg.eval_mode, out_rng).max_preact > threshold
        write_csv(out / f"ood_grid_{method}.csv", ["x", "y", "flagged"],
                  [[x, y, f] for (x, y), f in zip(outer, flags_out)])

        results[method] = {
            "train_accuracy": accuracy(st, tr.labels),
            "test_accuracy": accuracy(ste, te.labels),
            "entropy_train": float(st.entropy.mean()),
            "entropy_far": float(g.entropy[far].mean()) if far.any() else float("nan"),
            "ood_threshold": threshold,
            "ood_fraction_inner": float(flags_in.mean()),
            "ood_fraction_outer": float(flags_out.mean()),
            "density": model.density(),
        }
    header = ["method"] + list(next(iter(results.values())))
    write_csv(out / "summary.csv", header, [[m, *r.values()] for m, r in results.items()])
    write_manifest(out, "uncertainty", cfg, {"far_points": int(far.sum())})
    return results
