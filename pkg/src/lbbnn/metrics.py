"""Posterior-predictive evaluation and summary metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, softmax

from .network import apply_draw
from .rng import RngStream


@dataclass
class PredictiveSummary:
    probs: np.ndarray        # (n, C)
    entropy: np.ndarray      # nats
    max_prob: np.ndarray
    max_preact: np.ndarray   # max over classes of the averaged pre-activation
    prediction: np.ndarray


@dataclass
class SelectionScore:
    tpr: float
    fpr: float
    included: np.ndarray


def entropy(probs) -> np.ndarray:
    """Row-wise Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=1)


def _to_probs(scores: np.ndarray) -> np.ndarray:
    if scores.shape[1] == 1:
        p = expit(scores[:, 0])
        return np.stack([1.0 - p, p], axis=1)
    return softmax(scores, axis=1)


def predict_avg(model, x, samples: int, mode: str, rng: RngStream,
                batch_size: int | None = None) -> PredictiveSummary:
    """Average class probabilities over ``samples`` stochastic passes.

    Mode ``full`` samples weights and structures, ``median`` samples weights
    of the median probability model only, ``lrt`` samples pre-activations.
    Single-output models are treated as Bernoulli (two classes).
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    step = batch_size or max(x.shape[0], 1)
    prob_sum = None
    score_sum = None
    for _ in range(samples):
        if mode in ("full", "median") and hasattr(model, "draw"):
            # One weight draw per posterior sample, shared by every chunk.
            draw = model.draw(rng, mode)
            scores = np.concatenate([apply_draw(draw, x[i:i + step])
                                     for i in range(0, x.shape[0], step)], axis=0)
        else:
            scores = np.concatenate([model.forward(x[i:i + step], rng, mode=mode).data
                                     for i in range(0, x.shape[0], step)], axis=0)
        probs = _to_probs(scores)
        prob_sum = probs if prob_sum is None else prob_sum + probs
        score_sum = scores if score_sum is None else score_sum + scores
    probs = prob_sum / samples
    preact = score_sum / samples
    return PredictiveSummary(probs=probs, entropy=entropy(probs), max_prob=probs.max(axis=1),
                             max_preact=preact.max(axis=1), prediction=probs.argmax(axis=1))


def accuracy(summary_or_pred, labels) -> float:
    pred = summary_or_pred.prediction if isinstance(summary_or_pred, PredictiveSummary) \
        else np.asarray(summary_or_pred)
    labels = np.asarray(labels)
    if pred.shape != labels.shape:
        raise ValueError("prediction and label lengths differ")
    return float(np.mean(pred == labels))


def density_report(model, threshold: float = 0.5) -> float:
    return float(model.density(threshold))


def tpr_fpr(alpha_hat, beta_true, threshold: float = 0.5, zero_tol: float = 0.01) -> SelectionScore:
    """True/false positive rates of the thresholded inclusion probabilities.

    A coefficient counts as truly non-zero when ``|beta| > zero_tol``.
    """
    alpha_hat = np.asarray(alpha_hat, dtype=np.float64)
    beta_true = np.asarray(beta_true, dtype=np.float64)
    if alpha_hat.shape != beta_true.shape:
        raise ValueError("alpha_hat and beta_true lengths differ")
    included = alpha_hat > threshold
    truth = np.abs(beta_true) > zero_tol
    tp = np.sum(included & truth)
    fn = np.sum(~included & truth)
    fp = np.sum(included & ~truth)
    tn = np.sum(~included & ~truth)
    tpr = tp / (tp + fn) if tp + fn else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    return SelectionScore(float(tpr), float(fpr), included)


def cumulative_accuracy(summary: PredictiveSummary, labels, window: int = 100) -> np.ndarray:
    """Accuracy over consecutive windows of predictions, most confident first.

    Trailing observations that do not fill a window are dropped.
    """
    labels = np.asarray(labels)
    order = np.argsort(-summary.max_prob, kind="stable")
    correct = (summary.prediction[order] == labels[order]).astype(np.float64)
    k = len(correct) // window
    return correct[: k * window].reshape(k, window).mean(axis=1)


def nearest_rank(values, level: float) -> float:
    """Empirical ``level`` quantile by the nearest-rank rule."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("empty sample")
    rank = max(1, math.ceil(level * v.size))
    return float(v[rank - 1])


def ood_threshold(model, train_x, samples: int, rng: RngStream, level: float = 0.95,
                  mode: str = "full") -> float:
    preact = predict_avg(model, train_x, samples, mode, rng).max_preact
    return nearest_rank(preact, level)


def ood_detect(model, train_x, query_x, level: float = 0.95, samples: int = 10,
               rng: RngStream | None = None, mode: str = "full") -> np.ndarray:
    """Flag queries whose maximum averaged pre-activation exceeds the
    one-sided ``level`` bound observed on the training inputs."""
    rng = rng or RngStream(0)
    train_rng, query_rng = rng.spawn(2)
    threshold = ood_threshold(model, train_x, samples, train_rng, level, mode)
    preact = predict_avg(model, query_x, samples, mode, query_rng).max_preact
    return preact > threshold
