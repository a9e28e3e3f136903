"""Layerwise Bayesian inference (BALI) for fully-connected networks.

Every layer is a multivariate Bayesian linear regression from its input
features to pseudo-targets, with a matrix-normal inverse-Wishart posterior.
Mini-batch statistics enter through exponential moving averages of the
likelihood's natural-parameter terms ``X'X``, ``X'Y`` and ``Y'Y``, corrected
for their zero initialisation by the running factor ``b``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .conjugate import MniwParams, PriorTerms, mniw_from_stats
from .linalg import CholeskyFactor, RngStream, cholesky
from .metrics import entropy
from .network import (
    ForwardTrace,
    LayerSpec,
    activate,
    backward_output_grads,
    forward,
    gaussian_nll_grad,
    layer_input,
    softmax,
    LOSS_HEADS,
)

log = logging.getLogger(__name__)

REPARAMS = ("weight", "local", "deterministic")
TASKS = ("regression", "softmax", "sigmoid")
GG_EPS = 1e-12
PREDICT_STREAM = 1_000_003


class BaliStepError(RuntimeError):
    """A numerical failure inside one layer update."""

    def __init__(self, layer: int, what: str, cause: Exception):
        super().__init__(f"layer {layer}: {what}: {cause}")
        self.layer = layer
        self.what = what


@dataclass(frozen=True)
class BaliConfig:
    alpha: float = 0.3
    beta: float = 0.2
    n_eff: float = 1.0
    batch_size: int = 1
    sigma_r2: float = 40.0
    # None means 0.01 * n_eff.
    sigma_u2: float | None = None
    # None means Dy + 2 for each layer.
    u0: float | None = None
    sigma_init: float = 1.0
    reparam: str = "weight"
    task: str = "regression"
    total_iters: int = 1000
    pred_samples: int = 256
    beta_milestones: tuple[float, ...] = (0.6, 0.8)
    beta_decay: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not self.n_eff > 0 or self.batch_size < 1:
            raise ValueError("n_eff and batch_size must be positive")
        if self.reparam not in REPARAMS:
            raise ValueError(f"reparam must be one of {REPARAMS}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.sigma_r2 <= 0 or (self.sigma_u2 is not None and self.sigma_u2 <= 0):
            raise ValueError("prior scales must be positive")
        if self.sigma_init < 0 or self.total_iters < 0 or self.pred_samples < 1:
            raise ValueError("invalid sigma_init / total_iters / pred_samples")

    @property
    def prior_noise_scale(self) -> float:
        return 0.01 * self.n_eff if self.sigma_u2 is None else self.sigma_u2

    def beta_at(self, t: int) -> float:
        """Update rate at (1-based) iteration ``t`` under the decay schedule."""
        beta = self.beta
        for frac in self.beta_milestones:
            if t > frac * self.total_iters:
                beta /= self.beta_decay
        return beta

    def prior_for(self, spec: LayerSpec) -> MniwParams:
        dx, dy = spec.in_dim + 1, spec.out_dim
        u0 = dy + 2.0 if self.u0 is None else self.u0
        return MniwParams.isotropic(dx, dy, self.sigma_r2, self.prior_noise_scale, u0)


@dataclass(frozen=True)
class EmaState:
    xx: np.ndarray
    xy: np.ndarray
    yy: np.ndarray
    gg: np.ndarray
    t: int = 0
    b: float = 0.0

    @classmethod
    def zeros(cls, dx: int, dy: int) -> "EmaState":
        return cls(np.zeros((dx, dx)), np.zeros((dx, dy)), np.zeros((dy, dy)), np.zeros(dy))


def _ema(old, new, beta):
    return (1.0 - beta) * old + beta * new


def ema_gg(state: EmaState, g: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Mean-squared gradient EMA and bias factor after one more update."""
    gg = _ema(state.gg, np.mean(g**2, axis=0), beta)
    b = 1.0 - (1.0 - state.b) * (1.0 - beta)
    return gg, b


def ema_update(state: EmaState, X, Y, g, beta: float, n_eff: float, batch_size: int) -> EmaState:
    scale = n_eff / batch_size
    gg, b = ema_gg(state, g, beta)
    return EmaState(
        xx=_ema(state.xx, scale * (X.T @ X), beta),
        xy=_ema(state.xy, scale * (X.T @ Y), beta),
        yy=_ema(state.yy, scale * (Y.T @ Y), beta),
        gg=gg,
        t=state.t + 1,
        b=b,
    )


def pseudo_targets(z, g, gg, b: float, alpha: float, eps: float = GG_EPS) -> np.ndarray:
    """Layer outputs moved by a step of ``alpha`` along the RMS-normalised gradient."""
    ms = np.asarray(gg) / b
    denom = np.sqrt(np.where(ms < eps, eps, ms))
    return z + alpha * g / denom


@dataclass(frozen=True)
class LayerPosterior:
    post: MniwParams
    sigma: np.ndarray
    W: np.ndarray
    prec_chol: CholeskyFactor = field(repr=False, compare=False)
    sigma_chol: CholeskyFactor = field(repr=False, compare=False)

    @property
    def M(self) -> np.ndarray:
        return self.post.M

    def output_var(self, X: np.ndarray) -> np.ndarray:
        """Row scale ``x' R x`` of the induced output distribution, per row of ``X``."""
        v = self.prec_chol.solve_lower(X.T)
        return np.sum(v * v, axis=0)


def _posterior_from_stats(prior, xx, xy, yy, n_eff, terms=None) -> LayerPosterior:
    fit = mniw_from_stats(prior, xx, xy, yy, n_eff, terms)
    post = fit.post
    denom = post.u + post.dy + 1
    sigma = post.U / denom
    sigma_chol = CholeskyFactor(fit.u_chol.lower / np.sqrt(denom))
    return LayerPosterior(post, sigma, post.M, fit.prec_chol, sigma_chol)


def recompute_posterior(
    state: EmaState, prior: MniwParams, n_eff: float, terms: PriorTerms | None = None
) -> LayerPosterior:
    """Posterior from bias-corrected EMA statistics; ``W`` is set to the mean."""
    if not state.b > 0:
        raise ValueError("bias factor must be positive; update the statistics first")
    b = state.b
    return _posterior_from_stats(prior, state.xx / b, state.xy / b, state.yy / b, n_eff, terms)


def sample_layer_weights(lp: LayerPosterior, mode: str, rng: RngStream | None, X=None):
    """Weights (``weight``/``deterministic``) or sampled outputs (``local``).

    In local mode the outputs for each row ``x`` of ``X`` are drawn from
    ``MN(M'x, x'Rx, Sigma)`` independently across rows. If ``X`` is given in
    weight or deterministic mode the outputs ``X @ W`` are returned.
    """
    M = lp.post.M
    if mode == "deterministic":
        return M if X is None else X @ M
    if mode == "weight":
        a = rng.normal(M.shape)
        W = M + lp.prec_chol.solve_upper(a) @ lp.sigma_chol.lower.T
        return W if X is None else X @ W
    if mode == "local":
        if X is None:
            raise ValueError("local reparametrisation needs the layer inputs")
        a = rng.normal((X.shape[0], M.shape[1]))
        scale = np.sqrt(lp.output_var(X))[:, None]
        return X @ M + scale * (a @ lp.sigma_chol.lower.T)
    raise ValueError(f"unknown reparametrisation {mode!r}")


@dataclass
class StepRecord:
    """What one layer update consumed, for the mean-recursion check."""

    layer: int
    M_prev: np.ndarray
    M: np.ndarray
    R: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    beta: float
    b: float
    n_eff: float
    batch_size: int


@dataclass
class BaliModel:
    specs: list[LayerSpec]
    config: BaliConfig
    priors: list[MniwParams]
    emas: list[EmaState]
    layers: list[LayerPosterior]
    rngs: list[RngStream]
    history: list[StepRecord] | None = None
    prior_terms: list[PriorTerms] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if not self.prior_terms:
            self.prior_terms = [PriorTerms.of(p) for p in self.priors]

    @property
    def t(self) -> int:
        return self.emas[0].t

    @property
    def noise_cov(self) -> np.ndarray:
        return self.layers[-1].sigma

    def weights(self, mode: str | None = None) -> list[np.ndarray]:
        mode = mode or self.config.reparam
        if mode == "weight":
            return [lp.W for lp in self.layers]
        return [lp.M for lp in self.layers]


def _initial_layer(prior: MniwParams, n_eff: float, W: np.ndarray) -> LayerPosterior:
    dx, dy = prior.M.shape
    lp = _posterior_from_stats(prior, np.zeros((dx, dx)), np.zeros((dx, dy)), np.zeros((dy, dy)), n_eff)
    return replace(lp, W=W)


def init_model(specs: Sequence[LayerSpec], config: BaliConfig, seed: int | None = None) -> BaliModel:
    """Fresh model: ``W ~ N(0, sigma_init^2)``, zero statistics, isotropic priors."""
    seed = config.seed if seed is None else seed
    specs = list(specs)
    for s, nxt in zip(specs, specs[1:]):
        if s.out_dim != nxt.in_dim:
            raise ValueError("consecutive layer dimensions do not match")
    if config.task == "sigmoid" and specs[-1].out_dim != 1:
        raise ValueError("sigmoid head needs a single output")
    rngs = [RngStream(seed, l) for l in range(len(specs))]
    priors = [config.prior_for(s) for s in specs]
    layers = []
    emas = []
    for spec, prior, rng in zip(specs, priors, rngs):
        W = config.sigma_init * rng.normal(spec.weight_shape)
        layers.append(_initial_layer(prior, config.n_eff, W))
        emas.append(EmaState.zeros(*spec.weight_shape))
    return BaliModel(specs, config, priors, emas, layers, rngs)


def _local_forward(model: BaliModel, X: np.ndarray, rngs: Sequence[RngStream]) -> ForwardTrace:
    xs, zs = [], []
    x = layer_input(X, scale=False)
    for i, (spec, lp) in enumerate(zip(model.specs, model.layers)):
        z = sample_layer_weights(lp, "local", rngs[i], x)
        xs.append(x)
        zs.append(z)
        if i + 1 < len(model.specs):
            x = layer_input(activate(spec.activation, z))
    return ForwardTrace(tuple(xs), tuple(zs))


def model_forward(model: BaliModel, X: np.ndarray, mode: str | None = None, rngs=None) -> ForwardTrace:
    mode = mode or model.config.reparam
    if mode == "local":
        return _local_forward(model, X, rngs or model.rngs)
    return forward(model.specs, model.weights(mode), X)


def head_grad(model: BaliModel, z_last: np.ndarray, targets) -> tuple[float, np.ndarray]:
    task = model.config.task
    if task == "regression":
        return gaussian_nll_grad(z_last, targets, model.noise_cov)
    return LOSS_HEADS[task](z_last, targets)


def train_step(model: BaliModel, X, targets) -> BaliModel:
    """One iteration of layerwise inference on a mini-batch. Updates ``model`` in place."""
    cfg = model.config
    X = np.asarray(X, dtype=float)
    mode = cfg.reparam
    trace = model_forward(model, X, mode)
    _, g_last = head_grad(model, trace.output, targets)
    grads = backward_output_grads(model.specs, model.weights(mode), trace, g_last)

    n_layers = len(model.specs)
    beta = cfg.beta_at(model.t + 1)
    batch = X.shape[0]
    for l in range(n_layers):
        state = model.emas[l]
        x_l, z_l, g_l = trace.xs[l], trace.zs[l], grads[l]
        gg, b = ema_gg(state, g_l, beta)
        if l == n_layers - 1 and cfg.task == "regression":
            Y = np.asarray(targets, dtype=float).reshape(z_l.shape)
        else:
            Y = pseudo_targets(z_l, g_l, gg, b, cfg.alpha)
        new_state = ema_update(state, x_l, Y, g_l, beta, cfg.n_eff, batch)
        try:
            lp = recompute_posterior(new_state, model.priors[l], cfg.n_eff, model.prior_terms[l])
        except (ValueError, np.linalg.LinAlgError) as err:
            raise BaliStepError(l, "posterior recompute", err) from err
        if mode == "weight":
            try:
                lp = replace(lp, W=sample_layer_weights(lp, "weight", model.rngs[l]))
            except (ValueError, np.linalg.LinAlgError) as err:
                raise BaliStepError(l, "weight sampling", err) from err
        if model.history is not None:
            model.history.append(
                StepRecord(l, model.layers[l].M, lp.M, lp.post.R, x_l, Y, beta, b, cfg.n_eff, batch)
            )
        model.emas[l] = new_state
        model.layers[l] = lp
    return model


def mean_recursion_check(history: Sequence[StepRecord], priors: Sequence[MniwParams]) -> float:
    """Largest deviation between recorded means and the incremental mean update.

    The incremental form is
    ``M_t = M_{t-1} + r R_t (R0^-1 (M0 - M_{t-1}) + (N/B) X' dY)`` with
    ``dY = Y - X M_{t-1}`` and rate ``r = beta_t / b_t``; without bias
    correction (``b_t = 1``) the rate is ``beta_t`` itself.
    """
    if not history:
        raise ValueError("no recorded steps")
    worst = 0.0
    for rec in history:
        prior = priors[rec.layer]
        r0 = cholesky(prior.R)
        dY = rec.Y - rec.X @ rec.M_prev
        inner = r0.solve(prior.M - rec.M_prev) + (rec.n_eff / rec.batch_size) * rec.X.T @ dY
        pred = rec.M_prev + (rec.beta / rec.b) * rec.R @ inner
        worst = max(worst, float(np.abs(rec.M - pred).max()))
    return worst


@dataclass(frozen=True)
class Predictive:
    """Monte-Carlo posterior predictive at a set of inputs.

    ``samples`` holds the last-layer outputs per weight draw, shape
    ``(S, n, D)``. For regression ``noise`` is the last layer's noise
    covariance; for classification ``probs`` is the mean class distribution.
    """

    samples: np.ndarray
    task: str
    noise: np.ndarray | None = None

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def epistemic_var(self) -> np.ndarray:
        return self.samples.var(axis=0)

    @property
    def total_var(self) -> np.ndarray:
        return self.epistemic_var + np.diag(self.noise)[None, :]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.total_var)

    @property
    def probs(self) -> np.ndarray:
        if self.task == "sigmoid":
            p1 = 1.0 / (1.0 + np.exp(-self.samples[..., 0]))
            return np.stack([1 - p1.mean(0), p1.mean(0)], axis=1)
        return np.mean([softmax(s) for s in self.samples], axis=0)

    @property
    def entropy(self) -> np.ndarray:
        return entropy(self.probs)

    def log_likelihood(self, y) -> np.ndarray:
        """Per-datum log predictive density, log-mean-exp over the draws."""
        if self.task != "regression":
            labels = np.asarray(y, dtype=int)
            p = self.probs[np.arange(len(labels)), labels]
            return np.log(np.maximum(p, 1e-300))
        y = np.asarray(y, dtype=float).reshape(self.samples.shape[1:])
        chol = cholesky(self.noise)
        s, n, d = self.samples.shape
        resid = (y[None] - self.samples).reshape(-1, d)
        v = chol.solve_lower(resid.T).T.reshape(s, n, d)
        logp = -0.5 * np.sum(v * v, axis=2) - 0.5 * (d * np.log(2 * np.pi) + chol.logdet())
        return logsumexp(logp, axis=0) - np.log(self.samples.shape[0])


def predict(
    model: BaliModel,
    X,
    n_samples: int | None = None,
    mode: str | None = None,
    rng: RngStream | None = None,
) -> Predictive:
    """Posterior predictive by forward passes with fresh posterior draws.

    Draws come from a dedicated stream so evaluation never perturbs the
    training streams.
    """
    n_samples = model.config.pred_samples if n_samples is None else n_samples
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mode = mode or model.config.reparam
    X = np.asarray(X, dtype=float)
    rng = rng or RngStream(model.config.seed, PREDICT_STREAM)
    outs = []
    if mode == "deterministic":
        outs = [forward(model.specs, model.weights("deterministic"), X).output] * n_samples
    elif mode == "local":
        rngs = [rng] * len(model.specs)
        outs = [_local_forward(model, X, rngs).output for _ in range(n_samples)]
    else:
        for _ in range(n_samples):
            ws = [sample_layer_weights(lp, "weight", rng) for lp in model.layers]
            outs.append(forward(model.specs, ws, X).output)
    noise = model.noise_cov if model.config.task == "regression" else None
    return Predictive(np.stack(outs), model.config.task, noise)
