"""Fully-connected network in the pre-activation convention.

Layer ``l`` receives ``x_l = [h(z_{l-1}), 1] / sqrt(D_{l-1} + 1)`` and computes
``z_l = x_l @ W_l`` with ``W_l`` of shape ``(D_{l-1} + 1, D_l)``; the last row
of ``W_l`` is the bias. The first layer receives the raw inputs with a
constant one appended and no rescaling.

All loss heads return the log-likelihood summed over the batch and its
gradient with respect to the last layer's outputs, i.e. the *ascent*
direction. Weight gradients are ``x_l.T @ g_l`` in the same convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import DimensionMismatch, NotPositiveDefinite, cholesky

ACTIVATIONS = ("tanh", "relu", "leaky_tanh", "identity")


@dataclass(frozen=True)
class LayerSpec:
    """One linear layer; ``activation`` is applied to its output before it
    feeds the next layer (ignored for the final layer)."""

    in_dim: int
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.in_dim + 1, self.out_dim)


def mlp(d_in: int, hidden: Sequence[int], d_out: int, activation: str = "tanh") -> list[LayerSpec]:
    dims = [d_in, *hidden, d_out]
    return [
        LayerSpec(dims[i], dims[i + 1], activation if i < len(dims) - 2 else "identity")
        for i in range(len(dims) - 1)
    ]


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_tanh":
        return np.tanh(z) + 0.1 * z
    return z


def activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "relu":
        return (z > 0).astype(float)
    if name == "leaky_tanh":
        return 1.0 - np.tanh(z) ** 2 + 0.1
    return np.ones_like(z)


def layer_input(h: np.ndarray, scale: bool = True) -> np.ndarray:
    """Append the bias column and, for hidden features, divide by sqrt(D + 1)."""
    x = np.concatenate([h, np.ones((h.shape[0], 1))], axis=1)
    if scale:
        x /= np.sqrt(h.shape[1] + 1.0)
    return x


@dataclass(frozen=True)
class ForwardTrace:
    xs: tuple[np.ndarray, ...]
    zs: tuple[np.ndarray, ...]

    @property
    def batch_size(self) -> int:
        return self.zs[0].shape[0]

    @property
    def output(self) -> np.ndarray:
        return self.zs[-1]


def check_weights(specs: Sequence[LayerSpec], weights: Sequence[np.ndarray]) -> None:
    if len(specs) != len(weights):
        raise DimensionMismatch(f"{len(specs)} layer specs but {len(weights)} weight matrices")
    for i, (s, w) in enumerate(zip(specs, weights)):
        if w.shape != s.weight_shape:
            raise DimensionMismatch(f"layer {i}: weights {w.shape}, expected {s.weight_shape}")


def init_weights(specs: Sequence[LayerSpec], std: float, rngs) -> list[np.ndarray]:
    return [std * rng.normal(s.weight_shape) for s, rng in zip(specs, rngs)]


def forward(specs: Sequence[LayerSpec], weights: Sequence[np.ndarray], X: np.ndarray, masks=None) -> ForwardTrace:
    """Forward pass. ``masks[l]``, if given, multiplies the activations of
    hidden layer ``l`` (used for dropout); the last entry is ignored."""
    check_weights(specs, weights)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != specs[0].in_dim:
        raise DimensionMismatch(f"input batch {X.shape} does not match in_dim {specs[0].in_dim}")
    xs, zs = [], []
    x = layer_input(X, scale=False)
    for i, (spec, w) in enumerate(zip(specs, weights)):
        z = x @ w
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite outputs in layer {i}")
        xs.append(x)
        zs.append(z)
        if i + 1 < len(specs):
            h = activate(spec.activation, z)
            if masks is not None:
                h = h * masks[i]
            x = layer_input(h)
    return ForwardTrace(tuple(xs), tuple(zs))


def backward_output_grads(
    specs: Sequence[LayerSpec],
    weights: Sequence[np.ndarray],
    trace: ForwardTrace,
    dl_dz_last: np.ndarray,
    masks=None,
) -> list[np.ndarray]:
    """Gradients of the objective with respect to every layer output ``z_l``."""
    check_weights(specs, weights)
    dl_dz_last = np.asarray(dl_dz_last, dtype=float)
    if dl_dz_last.shape != trace.zs[-1].shape:
        raise DimensionMismatch(f"output gradient {dl_dz_last.shape} vs outputs {trace.zs[-1].shape}")
    grads = [dl_dz_last]
    for l in range(len(specs) - 2, -1, -1):
        w_next = weights[l + 1][:-1]
        g = (grads[0] @ w_next.T) / np.sqrt(specs[l].out_dim + 1.0)
        if masks is not None:
            g = g * masks[l]
        grads.insert(0, g * activate_grad(specs[l].activation, trace.zs[l]))
    return grads


def weight_grads(trace: ForwardTrace, grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [x.T @ g for x, g in zip(trace.xs, grads)]


# Loss heads. Each returns (log-likelihood summed over the batch, d/dz).


def gaussian_nll_grad(z, targets, sigma) -> tuple[float, np.ndarray]:
    """Gaussian log-likelihood ``sum_n log N(y_n; z_n, sigma)`` and its gradient.

    ``sigma`` is treated as a constant.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(z.shape)
    chol = cholesky(np.atleast_2d(sigma))
    if chol.jitter:
        raise NotPositiveDefinite("noise covariance is not positive definite")
    resid = y - z
    sol = chol.solve(resid.T).T
    n, d = z.shape
    ll = -0.5 * np.sum(resid * sol) - 0.5 * n * (d * np.log(2 * np.pi) + chol.logdet())
    return float(ll), sol


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(z, dtype=float)))


def _check_labels(labels, n_classes: int, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(int)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")
    return labels


def softmax_ce_grad(z, labels) -> tuple[float, np.ndarray]:
    z = np.asarray(z, dtype=float)
    labels = _check_labels(labels, z.shape[1], z.shape[0])
    logp = _log_softmax(z)
    onehot = np.zeros_like(z)
    onehot[np.arange(z.shape[0]), labels] = 1.0
    return float(logp[np.arange(z.shape[0]), labels].sum()), onehot - np.exp(logp)


def sigmoid_bce_grad(z, labels) -> tuple[float, np.ndarray]:
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != 1:
        raise DimensionMismatch("sigmoid head expects a single output column")
    y = _check_labels(labels, 2, z.shape[0]).astype(float)[:, None]
    # log sigma(z) = -softplus(-z), log(1 - sigma(z)) = -softplus(z)
    ll = -(y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z)).sum()
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    return float(ll), y - p


LOSS_HEADS = {
    "softmax": softmax_ce_grad,
    "sigmoid": sigmoid_bce_grad,
}
