"""One test per acceptance criterion, at the stated tolerances and budgets."""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from bali.checkpoint import load_checkpoint, save_checkpoint
from bali.conjugate import MatrixNormal, mniw_posterior, sample_matrix_normal
from bali.datasets import gen_sinc
from bali.experiment import (
    cell_ood_points,
    config_from_dict,
    fit,
    load_config,
    nll_curve,
    prediction_grid,
    run_experiment,
    summarize,
)
from bali.inference import BaliConfig, init_model, train_step
from bali.linalg import RngStream, kron
from bali.metrics import accuracy, ood_auc, rmse
from bali.network import mlp
from bali.oracles import gradient_suite, kron_suite, posterior_suite, recursion_suite

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
UCI = ROOT / "tests" / "fixtures" / "uci"

# Points between the two noise-free moons, and the middle of each arc.
MOON_BOUNDARY = np.array([[0.5, 0.25], [0.0, 0.75], [1.0, -0.25]])
MOON_CENTERS = np.array([[0.0, 1.0], [1.0, -0.5]])


def _timed(fn, *args, **kw):
    start = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - start


def _assert_checks(checks):
    for c in checks:
        assert c.ok, f"{c.name}: deviation {c.deviation:.3e} > {c.tol:.0e}"


def test_kronecker_identities():
    checks, secs = _timed(kron_suite, 200)
    assert {c.name for c in checks} == {
        "distributive", "associative", "inverse", "transpose", "mixed_product", "vectorisation"}
    assert all(c.tol == 1e-10 for c in checks)
    _assert_checks(checks)
    assert secs < 5


def test_posterior_matches_dense_oracle():
    checks, secs = _timed(posterior_suite, 100)
    by_name = {c.name: c for c in checks}
    _assert_checks([by_name["mvblr_mean_vs_dense"], by_name["mvblr_cov_vs_dense"]])
    assert by_name["mvblr_mean_vs_dense"].tol == by_name["mvblr_cov_vs_dense"].tol == 1e-8
    assert secs < 10


def test_natural_parameter_route():
    by_name = {c.name: c for c in posterior_suite(100)}
    _assert_checks([by_name["mniw_vs_natural_params"]])
    assert by_name["mniw_vs_natural_params"].tol == 1e-8
    assert by_name["mniw_dof"].deviation == 0.0


def test_matrix_normal_sampler_moments():
    M = np.array([[1.0, -2.0], [0.5, 3.0]])
    R = np.array([[2.0, 0.8], [0.8, 1.0]])
    S = np.array([[1.0, 0.5], [0.5, 2.0]])
    draws, secs = _timed(sample_matrix_normal, MatrixNormal(M, R, S), RngStream(0), 200_000)
    vecs = draws.transpose(0, 2, 1).reshape(len(draws), -1)  # column-major vec
    cov = np.cov(vecs, rowvar=False)
    target = kron(S, R)
    assert np.max(np.abs(cov - target) / np.abs(target)) <= 0.05
    assert np.max(np.abs(draws.mean(0) - M)) <= 0.01
    assert secs < 30


def test_output_gradients_match_finite_differences():
    checks = gradient_suite(50)
    assert {c.name for c in checks} == {"output_grads_gaussian", "output_grads_softmax", "output_grads_sigmoid"}
    _assert_checks(checks)


@pytest.mark.parametrize("task", ["regression", "softmax", "sigmoid"])
def test_single_full_batch_step_is_exact(task):
    gen = np.random.default_rng(5)
    n = 24
    X = gen.standard_normal((n, 3))
    if task == "regression":
        y, d_out = gen.standard_normal((n, 2)), 2
    else:
        d_out = 3 if task == "softmax" else 1
        y = gen.integers(0, max(d_out, 2), n)
    cfg = BaliConfig(beta=1.0, n_eff=n, batch_size=n, task=task, sigma_r2=10.0, sigma_init=1.0, seed=2)
    model = init_model(mlp(3, [6, 5], d_out, "tanh"), cfg)
    model.history = []
    train_step(model, X, y)
    assert len(model.history) == 3
    for rec, lp, prior in zip(model.history, model.layers, model.priors):
        exact = mniw_posterior(rec.X, rec.Y, prior)
        for got, want in ((lp.post.M, exact.M), (lp.post.R, exact.R), (lp.post.U, exact.U)):
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)
        assert lp.post.u == exact.u


def test_mean_recursion_on_sinc():
    _assert_checks(recursion_suite(50))


@pytest.mark.slow
def test_sinc_fit_and_uncertainty_growth():
    cfg = load_config(CONFIGS / "sinc.yaml")
    assert cfg.model.hidden == [256, 256, 256] and cfg.dataset.n == 128
    assert cfg.bali.batch_size is None and cfg.iterations <= 5000  # full batch
    start = time.perf_counter()
    runner, ds = fit(cfg, seed=0)
    Xtr, ytr = ds.train()
    pred = runner.predictive(Xtr)
    train_rmse = rmse(pred.mean, ytr)
    grid, _, std = prediction_grid(runner, ds)
    secs = time.perf_counter() - start
    x = np.abs(grid[:, 0])
    far = std[(x >= 1.5) & (x <= 2.0)].mean()
    near = std[x <= 0.9].mean()
    assert train_rmse <= 0.15
    assert far >= 2 * near, f"far std {far:.3f} vs near std {near:.3f}"
    assert secs < 300


@pytest.fixture(scope="module")
def two_moons_runs():
    cfg = load_config(CONFIGS / "two_moons.yaml")
    assert cfg.dataset.n == 128
    start = time.perf_counter()
    runs = []
    for seed in (0, 1, 2):
        runner, ds = fit(cfg, seed)
        Xte, yte = ds.test()
        pred = runner.predictive(Xte)
        ood = runner.predictive(cell_ood_points(cfg, ds, seed))
        edge = runner.predictive(MOON_BOUNDARY).entropy
        centre = runner.predictive(MOON_CENTERS).entropy
        runs.append({
            "acc": accuracy(pred.probs, yte),
            "auc": ood_auc(pred.entropy, ood.entropy),
            "edge": edge, "centre": centre,
        })
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_two_moons_accuracy_and_boundary_entropy(two_moons_runs):
    runs, secs = two_moons_runs
    assert np.mean([r["acc"] for r in runs]) >= 0.95
    for r in runs:
        assert r["edge"].mean() > r["centre"].mean()
    assert secs < 300


def _uci_rmse(name, tmp_path):
    path = UCI / f"{name}.csv"
    assert path.exists(), f"{path} is required (CSV with feature columns and target column 'y')"
    data = yaml.safe_load((CONFIGS / f"uci_{name}.yaml").read_text())
    data["dataset"]["path"] = str(path)
    cfg = config_from_dict(data)
    assert cfg.model.hidden == [50] and cfg.model.activation == "relu" and cfg.splits == 5
    res = run_experiment(cfg, tmp_path / name)
    assert not res.errors
    return summarize(res.rows, "rmse")[0]


@pytest.mark.slow
def test_uci_regression_rmse(tmp_path):
    start = time.perf_counter()
    yacht = _uci_rmse("yacht", tmp_path)
    energy = _uci_rmse("energy", tmp_path)
    assert yacht <= 1.0
    assert energy <= 0.7
    assert time.perf_counter() - start < 1200


@pytest.mark.slow
def test_two_moons_ood_detection(two_moons_runs):
    runs, _ = two_moons_runs
    assert np.mean([r["auc"] for r in runs]) >= 0.90


def _first_within(its, vals, level):
    hit = np.nonzero(vals <= level)[0]
    return its[hit[0]] if hit.size else np.inf


@pytest.mark.slow
def test_bali_converges_faster_than_map():
    base = load_config(CONFIGS / "sinc.yaml")
    for seed in (0, 1, 2):
        its_b, nll_b = nll_curve(base, seed, every=10)
        its_a, nll_a = nll_curve(dataclasses.replace(base, method="map"), seed, every=10)
        level = nll_b[-1] + 0.05 * abs(nll_b[-1])
        t_bali = _first_within(its_b, nll_b, level)
        t_map = _first_within(its_a, nll_a, level)
        assert t_bali <= t_map / 2, f"seed {seed}: BALI {t_bali}, MAP {t_map}"


def test_checkpoint_round_trip(tmp_path):
    data = gen_sinc(64, RngStream(0))
    cfg = BaliConfig(n_eff=64, batch_size=16, sigma_r2=100.0, total_iters=40, seed=1)
    model = init_model(mlp(1, [16, 16], 1, "tanh"), cfg)
    order = RngStream(0, 1)
    batches = [order.permutation(64)[:16] for _ in range(15)]
    for idx in batches[:5]:
        train_step(model, data.X[idx], data.y[idx])
    restored, _, _ = load_checkpoint(save_checkpoint(model, tmp_path / "m.npz"))
    for idx in batches[5:]:
        train_step(model, data.X[idx], data.y[idx])
        train_step(restored, data.X[idx], data.y[idx])
    for a, b, ea, eb in zip(model.layers, restored.layers, model.emas, restored.emas):
        for x, y in ((a.W, b.W), (a.post.M, b.post.M), (a.post.R, b.post.R), (a.post.U, b.post.U),
                     (ea.xx, eb.xx), (ea.gg, eb.gg)):
            assert np.array_equal(x, y)
        assert ea.b == eb.b
