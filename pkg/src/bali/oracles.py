"""Randomised numerical self-checks against independent dense computations.

Each suite returns a list of ``Check`` results (largest deviation over all
random instances, and the tolerance it must stay under). The reference
computations use explicit dense inverses and brute-force expansions and
share no code with the production paths beyond ``kron``/``vec`` in the
Kronecker suite, whose identities are checked against matrix products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conjugate import (
    MatrixNormal,
    MniwParams,
    likelihood_natural,
    mniw_from_natural,
    mniw_posterior,
    mniw_to_natural,
    mvblr_posterior,
)
from .datasets import gen_sinc
from .inference import BaliConfig, init_model, mean_recursion_check, train_step
from .linalg import RngStream, kron, spd_inverse, vec
from .network import (
    LayerSpec,
    activate,
    backward_output_grads,
    forward,
    gaussian_nll_grad,
    layer_input,
    mlp,
    sigmoid_bce_grad,
    softmax_ce_grad,
)

SUITES = ("kron", "posterior", "gradient", "recursion")


@dataclass(frozen=True)
class Check:
    name: str
    deviation: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.deviation <= self.tol)


def _rand(gen, *shape):
    return gen.standard_normal(shape)


def _spd(gen, n):
    a = gen.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def _shape(gen, lo=1, hi=4):
    return tuple(int(v) for v in gen.integers(lo, hi + 1, size=2))


def kron_suite(n_instances: int = 200, seed: int = 0) -> list[Check]:
    gen = np.random.default_rng(seed)
    dev = dict.fromkeys(
        ["distributive", "associative", "inverse", "transpose", "mixed_product", "vectorisation"], 0.0
    )
    for _ in range(n_instances):
        A, B, C = (_rand(gen, *_shape(gen)) for _ in range(3))
        B2 = _rand(gen, *A.shape)
        dev["distributive"] = max(dev["distributive"], np.abs(kron(A + B2, C) - (kron(A, C) + kron(B2, C))).max())
        dev["associative"] = max(dev["associative"], np.abs(kron(kron(A, B), C) - kron(A, kron(B, C))).max())
        dev["transpose"] = max(dev["transpose"], np.abs(kron(A, B).T - kron(A.T, B.T)).max())

        P, Q = _spd(gen, gen.integers(1, 5)), _spd(gen, gen.integers(1, 5))
        lhs = spd_inverse(kron(P, Q))
        rhs = kron(spd_inverse(P), spd_inverse(Q))
        dev["inverse"] = max(dev["inverse"], np.abs(lhs - rhs).max() / np.abs(rhs).max())

        (m, n), (p, q) = _shape(gen), _shape(gen)
        r, s = int(gen.integers(1, 5)), int(gen.integers(1, 5))
        A1, C1 = _rand(gen, m, n), _rand(gen, n, r)
        B1, D1 = _rand(gen, p, q), _rand(gen, q, s)
        dev["mixed_product"] = max(
            dev["mixed_product"], np.abs(kron(A1, B1) @ kron(C1, D1) - kron(A1 @ C1, B1 @ D1)).max()
        )

        Xm = _rand(gen, n, p)
        Bm = _rand(gen, p, q)
        dev["vectorisation"] = max(
            dev["vectorisation"], np.abs(vec(A1 @ Xm @ Bm) - kron(Bm.T, A1) @ vec(Xm)).max()
        )
    return [Check(k, float(v), 1e-10) for k, v in dev.items()]


def dense_mvblr(X, Y, M0, R0, sigma):
    """Posterior of ``vec(W)`` by the scalar-output Gaussian update on the
    stacked system ``y_n = (I kron x_n') vec(W)``, with dense inverses."""
    dx, dy = M0.shape
    prior_cov = np.kron(sigma, R0)
    sigma_inv = np.linalg.inv(sigma)
    prec = np.linalg.inv(prior_cov)
    eta = prec @ M0.reshape(-1, order="F")
    for x, y in zip(X, Y):
        xbar = np.kron(np.eye(dy), x[None, :])
        prec = prec + xbar.T @ sigma_inv @ xbar
        eta = eta + xbar.T @ sigma_inv @ y
    V = np.linalg.inv(prec)
    return V @ eta, V


def posterior_suite(n_instances: int = 100, seed: int = 0) -> list[Check]:
    gen = np.random.default_rng(seed)
    mean_dev = cov_dev = 0.0
    nat_dev = dof_dev = 0.0
    for _ in range(n_instances):
        dx, dy = int(gen.integers(1, 5)), int(gen.integers(1, 4))
        n = int(gen.integers(0, 9))
        X, Y = _rand(gen, n, dx), _rand(gen, n, dy)
        M0, R0, sigma = _rand(gen, dx, dy), _spd(gen, dx), _spd(gen, dy)
        post = mvblr_posterior(X, Y, MatrixNormal.conjugate(M0, R0, sigma), sigma)
        m_ref, V_ref = dense_mvblr(X, Y, M0, R0, sigma)
        mean_dev = max(mean_dev, np.abs(vec(post.M) - m_ref).max() / max(np.abs(m_ref).max(), 1e-300))
        cov_dev = max(cov_dev, np.abs(post.cov - V_ref).max() / np.abs(V_ref).max())

        prior = MniwParams(M0, R0, _spd(gen, dy), float(dy + gen.integers(0, 4)))
        direct = mniw_posterior(X, Y, prior)
        via = mniw_from_natural(mniw_to_natural(prior) + likelihood_natural(X, Y))
        for a, b in ((direct.M, via.M), (direct.R, via.R), (direct.U, via.U)):
            nat_dev = max(nat_dev, np.abs(a - b).max() / max(np.abs(b).max(), 1.0))
        dof_dev = max(dof_dev, abs(direct.u - (prior.u + n)), abs(via.u - (prior.u + n)))
    return [
        Check("mvblr_mean_vs_dense", float(mean_dev), 1e-8),
        Check("mvblr_cov_vs_dense", float(cov_dev), 1e-8),
        Check("mniw_vs_natural_params", float(nat_dev), 1e-8),
        Check("mniw_dof", float(dof_dev), 0.0),
    ]


HEADS = ("gaussian", "softmax", "sigmoid")


def _head_loss(head, z, targets, sigma):
    if head == "gaussian":
        return gaussian_nll_grad(z, targets, sigma)
    if head == "softmax":
        return softmax_ce_grad(z, targets)
    return sigmoid_bce_grad(z, targets)


def _random_problem(gen, head):
    depth = int(gen.integers(1, 4))
    dims = [int(v) for v in gen.integers(1, 9, size=depth + 1)]
    if head == "sigmoid":
        dims[-1] = 1
    elif head == "softmax":
        dims[-1] = max(dims[-1], 2)
    acts = ["tanh", "leaky_tanh", "identity", "relu"]
    specs = [
        LayerSpec(dims[i], dims[i + 1], acts[int(gen.integers(0, 4))] if i < depth - 1 else "identity")
        for i in range(depth)
    ]
    weights = [gen.standard_normal(s.weight_shape) for s in specs]
    batch = int(gen.integers(1, 5))
    X = gen.standard_normal((batch, dims[0]))
    if head == "gaussian":
        targets = gen.standard_normal((batch, dims[-1]))
    else:
        targets = gen.integers(0, max(dims[-1], 2), size=batch)
    sigma = _spd(gen, dims[-1]) / dims[-1]
    return specs, weights, X, targets, sigma


def _loss_from_layer(specs, weights, layer, z_l, head, targets, sigma):
    """Objective as a function of layer ``layer``'s outputs, rest fixed."""
    z = z_l
    for i in range(layer + 1, len(specs)):
        x = layer_input(activate(specs[i - 1].activation, z))
        z = x @ weights[i]
    return _head_loss(head, z, targets, sigma)[0]


def gradient_suite(n_networks: int = 50, seed: int = 0, step: float = 1e-5) -> list[Check]:
    """Per-layer output gradients against central finite differences.

    The deviation of an entry is ``|g - fd| / (|fd| + 1e-2)``; keeping it
    under 1e-5 means a relative error of 1e-5 with an absolute floor of 1e-7.
    """
    gen = np.random.default_rng(seed)
    worst = {h: 0.0 for h in HEADS}
    for head in HEADS:
        done = 0
        while done < n_networks:
            specs, weights, X, targets, sigma = _random_problem(gen, head)
            trace = forward(specs, weights, X)
            # Finite differences are unreliable at the relu kink.
            if any(s.activation == "relu" and np.min(np.abs(z)) < 1e-3 for s, z in zip(specs, trace.zs)):
                continue
            _, g_last = _head_loss(head, trace.output, targets, sigma)
            grads = backward_output_grads(specs, weights, trace, g_last)
            for l, (z, g) in enumerate(zip(trace.zs, grads)):
                fd = np.zeros_like(z)
                for idx in np.ndindex(*z.shape):
                    zp, zm = z.copy(), z.copy()
                    zp[idx] += step
                    zm[idx] -= step
                    lp = _loss_from_layer(specs, weights, l, zp, head, targets, sigma)
                    lm = _loss_from_layer(specs, weights, l, zm, head, targets, sigma)
                    fd[idx] = (lp - lm) / (2 * step)
                err = np.abs(g - fd) / (np.abs(fd) + 1e-2)
                worst[head] = max(worst[head], float(err.max()))
            done += 1
    return [Check(f"output_grads_{h}", v, 1e-5) for h, v in worst.items()]


def recursion_suite(n_steps: int = 50, seed: int = 0) -> list[Check]:
    """Mean recursion against direct posterior means over mini-batch sinc training."""
    data = gen_sinc(128, RngStream(seed, 7))
    cfg = BaliConfig(
        alpha=0.3, beta=0.2, n_eff=128, batch_size=16, sigma_r2=6400.0, sigma_init=3.0,
        total_iters=n_steps, seed=seed,
    )
    model = init_model(mlp(1, [32, 32], 1, "tanh"), cfg)
    model.history = []
    order = RngStream(seed, 8)
    for _ in range(n_steps):
        idx = order.permutation(data.n)[: cfg.batch_size]
        train_step(model, data.X[idx], data.y[idx])
    return [Check("mean_recursion", mean_recursion_check(model.history, model.priors), 1e-6)]


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name == "kron":
        return kron_suite(seed=seed)
    if name == "posterior":
        return posterior_suite(seed=seed)
    if name == "gradient":
        return gradient_suite(seed=seed)
    if name == "recursion":
        return recursion_suite(seed=seed)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
