"""Evaluation metrics: RMSE, log-likelihood, accuracy, calibration and ROC."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

ECE_BINS = 15


def _aligned(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} predictions, {len(b)} targets")
    if len(a) == 0:
        raise ValueError("empty input")
    return a, b


def rmse(pred, y) -> float:
    pred, y = _aligned(pred, y)
    return float(np.sqrt(np.mean((pred.reshape(y.shape) - y) ** 2)))


def log_mean_exp(logp, axis=0) -> np.ndarray:
    logp = np.asarray(logp, dtype=float)
    return logsumexp(logp, axis=axis) - np.log(logp.shape[axis])


def gaussian_logpdf(y, mean, var) -> np.ndarray:
    """Per-row log density of independent Gaussians, summed over the last axis."""
    y, mean, var = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, mean, var)))
    return np.sum(-0.5 * (np.log(2 * np.pi * var) + (y - mean) ** 2 / var), axis=-1)


def mixture_loglik(y, means, var) -> np.ndarray:
    """Log density of an equal-weight Gaussian mixture over samples.

    ``means`` has shape ``(S, n, d)``; ``var`` is the per-output noise variance.
    """
    means = np.asarray(means, dtype=float)
    y = np.asarray(y, dtype=float).reshape(means.shape[1:])
    return log_mean_exp(gaussian_logpdf(y[None], means, var), axis=0)


def nll(loglik) -> float:
    """Mean negative per-datum log predictive density."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.size == 0:
        raise ValueError("empty input")
    return float(-loglik.mean())


def accuracy(probs, labels) -> float:
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if len(probs) != len(labels):
        raise ValueError("length mismatch")
    if len(labels) == 0:
        raise ValueError("empty input")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def ece(probs, labels, n_bins: int = ECE_BINS) -> float:
    """Expected calibration error over equal-width confidence bins."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if len(probs) == 0:
        raise ValueError("empty input")
    if len(probs) != len(labels):
        raise ValueError("length mismatch")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(float)
    # Bin k holds confidences in (k/n, (k+1)/n]; zero goes in the first bin.
    idx = np.clip(np.ceil(conf * n_bins).astype(int) - 1, 0, n_bins - 1)
    total = 0.0
    for k in range(n_bins):
        sel = idx == k
        if sel.any():
            total += sel.sum() * abs(correct[sel].mean() - conf[sel].mean())
    return float(total / len(conf))


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if len(scores) != len(labels):
        raise ValueError("length mismatch")
    pos = labels == 1
    if pos.all() or not pos.any():
        raise ValueError("both classes must be present")
    return scores, pos


def auc(scores, labels) -> float:
    """Area under the ROC curve; higher scores indicate the positive class."""
    scores, pos = _check_binary(scores, labels)
    ranks = rankdata(scores)
    n1 = pos.sum()
    n0 = len(pos) - n1
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """``(threshold, fpr, tpr)`` at every distinct score, from strict to lenient.

    A point is classified positive when its score is at least the threshold.
    The list starts at ``(inf, 0, 0)``.
    """
    scores, pos = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    out = [(float("inf"), 0.0, 0.0)]
    for i in last:
        out.append((float(s[i]), fp[i] / fp[-1], tp[i] / tp[-1]))
    return out


def entropy(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=1)


def ood_auc(entropy_in, entropy_out) -> float:
    """AUC for telling in-distribution (positive) from OOD points by negative entropy."""
    scores = -np.concatenate([entropy_in, entropy_out])
    labels = np.r_[np.ones(len(entropy_in)), np.zeros(len(entropy_out))]
    return auc(scores, labels)
