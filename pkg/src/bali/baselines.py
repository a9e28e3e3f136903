"""Point-estimate baselines: MAP training with Adam, and Monte-Carlo dropout.

Both share the network module. Training minimises the mean negative
log-likelihood per datum; since the loss heads return ascent gradients,
the descent gradient of layer ``l`` is ``-x_l' g_l / B``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .inference import PREDICT_STREAM, Predictive
from .linalg import RngStream
from .network import (
    LOSS_HEADS,
    LayerSpec,
    backward_output_grads,
    forward,
    gaussian_nll_grad,
    init_weights,
    weight_grads,
)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("invalid Adam hyperparameters")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    config: AdamConfig = field(default_factory=AdamConfig)

    @classmethod
    def zeros_like(cls, weights: Sequence[np.ndarray], config: AdamConfig | None = None) -> "AdamState":
        return cls(
            [np.zeros_like(w) for w in weights],
            [np.zeros_like(w) for w in weights],
            0,
            config or AdamConfig(),
        )


def adam_step(weights, grads, state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam with decoupled weight decay; ``grads`` are descent gradients."""
    if len(weights) != len(grads) or len(weights) != len(state.m):
        raise ValueError("weights, gradients and optimizer state disagree in length")
    c = state.config
    t = state.t + 1
    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(weights, grads, state.m, state.v):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weights {w.shape}")
        m = c.beta1 * m + (1 - c.beta1) * g
        v = c.beta2 * v + (1 - c.beta2) * g * g
        m_hat = m / (1 - c.beta1**t)
        v_hat = v / (1 - c.beta2**t)
        new_w.append(w - c.lr * (m_hat / (np.sqrt(v_hat) + c.eps) + c.weight_decay * w))
        new_m.append(m)
        new_v.append(v)
    return new_w, AdamState(new_m, new_v, t, c)


def dropout_masks(specs: Sequence[LayerSpec], batch: int, p: float, rng: RngStream) -> list[np.ndarray] | None:
    """Inverted-dropout keep masks for the hidden activations (entries 0 or 1/(1-p))."""
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    if p == 0:
        return None
    keep = 1.0 - p
    return [rng.bernoulli(keep, (batch, s.out_dim)) / keep for s in specs[:-1]]


@dataclass(frozen=True)
class MapConfig:
    task: str = "regression"
    adam: AdamConfig = field(default_factory=AdamConfig)
    dropout: float = 0.0
    sigma_init: float = 1.0
    pred_samples: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("regression", "softmax", "sigmoid"):
            raise ValueError(f"unknown task {self.task!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout probability must lie in [0, 1)")


@dataclass
class MapModel:
    specs: list[LayerSpec]
    config: MapConfig
    weights: list[np.ndarray]
    adam: AdamState
    rng: RngStream
    # Plug-in noise variance per output (regression only).
    noise_var: np.ndarray | None = None

    @property
    def t(self) -> int:
        return self.adam.t


def init_map(specs: Sequence[LayerSpec], config: MapConfig, seed: int | None = None) -> MapModel:
    seed = config.seed if seed is None else seed
    specs = list(specs)
    rngs = [RngStream(seed, l) for l in range(len(specs))]
    weights = init_weights(specs, config.sigma_init, rngs)
    noise = np.ones(specs[-1].out_dim) if config.task == "regression" else None
    adam = AdamState.zeros_like(weights, config.adam)
    return MapModel(specs, config, weights, adam, RngStream(seed, len(specs)), noise)


def _head(task: str, z, targets):
    if task == "regression":
        return gaussian_nll_grad(z, targets, np.eye(z.shape[1]))
    return LOSS_HEADS[task](z, targets)


def map_step(model: MapModel, X, targets) -> float:
    """One Adam step on a mini-batch; returns the batch mean training loss.

    For regression the loss is the unit-variance Gaussian negative
    log-likelihood; the plug-in noise variance is set separately by ``fit_noise``.
    """
    X = np.asarray(X, dtype=float)
    masks = dropout_masks(model.specs, X.shape[0], model.config.dropout, model.rng)
    trace = forward(model.specs, model.weights, X, masks)
    ll, g_last = _head(model.config.task, trace.output, targets)
    grads = backward_output_grads(model.specs, model.weights, trace, g_last, masks)
    batch = X.shape[0]
    descent = [-gw / batch for gw in weight_grads(trace, grads)]
    model.weights, model.adam = adam_step(model.weights, descent, model.adam)
    return -ll / batch


def fit_noise(model: MapModel, X, y) -> np.ndarray:
    """Set the plug-in noise variance to the mean squared training residual."""
    z = forward(model.specs, model.weights, np.asarray(X, dtype=float)).output
    resid = np.asarray(y, dtype=float).reshape(z.shape) - z
    model.noise_var = np.maximum(np.mean(resid**2, axis=0), 1e-12)
    return model.noise_var


def map_predict(model: MapModel, X) -> Predictive:
    z = forward(model.specs, model.weights, np.asarray(X, dtype=float)).output
    return Predictive(z[None], model.config.task, _noise(model))


def _noise(model: MapModel):
    if model.config.task != "regression":
        return None
    return np.diag(model.noise_var)


def mc_dropout_predict(
    specs: Sequence[LayerSpec],
    weights: Sequence[np.ndarray],
    X,
    p: float,
    n_masks: int,
    rng: RngStream,
    task: str = "softmax",
    noise=None,
) -> Predictive:
    """Average of predictions under ``n_masks`` random dropout masks."""
    if n_masks < 1:
        raise ValueError("n_masks must be >= 1")
    X = np.asarray(X, dtype=float)
    outs = [
        forward(specs, weights, X, dropout_masks(specs, X.shape[0], p, rng)).output
        for _ in range(n_masks)
    ]
    return Predictive(np.stack(outs), task, None if noise is None else np.atleast_2d(noise))


def predict_baseline(model: MapModel, X, n_samples: int | None = None) -> Predictive:
    """MAP point prediction, or MC-dropout averaging when dropout is enabled."""
    if model.config.dropout == 0:
        return map_predict(model, X)
    n = model.config.pred_samples if n_samples is None else n_samples
    rng = RngStream(model.config.seed, PREDICT_STREAM)
    return mc_dropout_predict(
        model.specs, model.weights, X, model.config.dropout, n, rng, model.config.task, _noise(model)
    )
