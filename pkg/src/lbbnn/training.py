"""Negative-ELBO objective and mini-batch Adam training."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, Tensor
from .checkpoint import save_checkpoint
from .rng import RngStream

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "nll", "kl_weights", "kl_bias", "log_q_z", "log_r_z", "total")


class TrainingDiverged(FloatingPointError):
    """The objective became non-finite; ``component`` names the culprit."""

    def __init__(self, component: str, detail: str = ""):
        super().__init__(f"non-finite {component}{': ' + detail if detail else ''}")
        self.component = component


@dataclass
class ElboReport:
    """One step's decomposition of the objective.

    ``total = nll + kl_scale * (kl_weights + kl_bias + log_q_z - log_r_z)``,
    where ``nll`` is summed over the batch.
    """

    nll: float
    kl_weights: float
    kl_bias: float
    log_q_z: float
    log_r_z: float
    total: float
    kl_scale: float = 1.0

    def row(self) -> dict:
        d = asdict(self)
        d.pop("kl_scale")
        return d


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    likelihood: str = "categorical"
    mc_samples: int = 1
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.likelihood not in ("categorical", "bernoulli"):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")


def nll(outputs: Tensor, targets, kind: str = "categorical") -> Tensor:
    """Mean negative log-likelihood of ``targets`` under the network outputs.

    ``categorical`` expects pre-softmax scores ``(batch, C)`` and integer class
    labels; ``bernoulli`` expects pre-sigmoid scores ``(batch, 1)`` and 0/1
    labels.
    """
    outputs = ad.as_tensor(outputs)
    targets = np.asarray(targets)
    n = outputs.shape[0]
    if targets.shape != (n,):
        raise ad.ShapeError(f"targets must have shape ({n},), got {targets.shape}")
    if kind == "categorical":
        c = outputs.shape[1]
        if np.any(targets < 0) or np.any(targets >= c) or not np.issubdtype(targets.dtype, np.integer):
            raise ValueError("target index out of range")
        onehot = np.zeros((n, c))
        onehot[np.arange(n), targets] = 1.0
        return -(ad.log_softmax(outputs) * Tensor(onehot)).sum() / float(n)
    if kind == "bernoulli":
        if outputs.ndim != 2 or outputs.shape[1] != 1:
            raise ad.ShapeError("bernoulli outputs must have shape (batch, 1)")
        if not np.all((targets == 0) | (targets == 1)):
            raise ValueError("bernoulli targets must be 0 or 1")
        y = Tensor(targets.astype(np.float64).reshape(n, 1))
        return (ad.softplus(outputs) - outputs * y).sum() / float(n)
    raise ValueError(f"unknown likelihood {kind!r}")


def elbo_step(model, x, y, config: TrainConfig, rng: RngStream,
              n_total: int) -> tuple[Tensor, ElboReport]:
    """Single-sample estimate of the scaled negative ELBO on one batch.

    Returns the differentiable objective and its decomposition. The batch
    negative log-likelihood is summed (not averaged) and the divergence
    terms are weighted by ``batch / n_total``, so summing over an epoch
    estimates the full-data negative ELBO.
    """
    x = ad.as_tensor(x)
    b = x.shape[0]
    scale = b / float(n_total)
    terms = []
    try:
        for _ in range(config.mc_samples):
            out, t = model.forward_train(x, rng)
            data = nll(out, y, config.likelihood) * float(b)
            terms.append((data, t.kl_weights, t.kl_bias, t.log_q_z, t.log_r_z))
    except NonFiniteError as exc:
        raise TrainingDiverged("forward pass", str(exc)) from exc
    k = float(config.mc_samples)
    if len(terms) == 1:
        parts = list(terms[0])
    else:
        parts = [sum_tensors([t[j] for t in terms]) / k for j in range(5)]
    data, kl_w, kl_b, lq, lr = parts
    total = data + scale * (kl_w + kl_b + lq - lr)
    report = ElboReport(float(data.data), float(kl_w.data), float(kl_b.data),
                        float(lq.data), float(lr.data), float(total.data), scale)
    for name in ("nll", "kl_weights", "kl_bias", "log_q_z", "log_r_z", "total"):
        if not np.isfinite(getattr(report, name)):
            raise TrainingDiverged(name)
    return total, report


def sum_tensors(ts):
    out = ts[0]
    for t in ts[1:]:
        out = out + t
    return out


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState, lr: float) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have equal length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ad.ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        step = m / denom
        step *= lr / c1
        p.data -= step
    return state


def _mean_report(reports: list[ElboReport]) -> dict:
    return {k: float(np.mean([getattr(r, k) for r in reports]))
            for k in ("nll", "kl_weights", "kl_bias", "log_q_z", "log_r_z", "total")}


def train(model, x: np.ndarray, y: np.ndarray, config: TrainConfig,
          rng: RngStream | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[object, list[dict]]:
    """Fit ``model`` by mini-batch Adam on the scaled negative ELBO.

    Returns the model (trained in place) and one averaged report per epoch.
    ``on_epoch`` is called with each epoch's report as it completes.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = x.shape[0]
    if config.batch_size > n:
        raise ValueError("batch_size exceeds the dataset size")
    rng = rng or RngStream(config.seed)
    params = model.parameters()
    state = AdamState.for_params(params)
    history: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        reports = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            with Tape() as tape:
                total, report = elbo_step(model, x[idx], y[idx], config, rng, n)
                grads = tape.gradient(total, params)
            adam_step(params, grads, state, config.learning_rate)
            reports.append(report)
        row = {"epoch": epoch, **_mean_report(reports)}
        history.append(row)
        log.debug("epoch %d total %.4f", epoch, row["total"])
        if on_epoch is not None:
            on_epoch(row)
        if config.checkpoint_every and config.checkpoint_path and epoch % config.checkpoint_every == 0:
            save_checkpoint(model, config.checkpoint_path, seed=config.seed)
    return model, history


def write_history(history: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])
    return path
