import csv

import numpy as np
import pytest
import yaml

import bali.experiment as E
from bali.cli import main
from bali.datasets import load_csv, CsvSchema
from bali.experiment import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    load_config,
    ood_points,
    run_experiment,
    summarize,
)
from bali.linalg import RngStream


def _small(**over):
    base = {
        "name": "tiny",
        "dataset": {"kind": "sinc", "n": 32, "test_n": 16},
        "model": {"hidden": [8], "activation": "tanh"},
        "bali": {"sigma_r2": 100.0, "pred_samples": 8, "batch_size": 8},
        "seeds": [0],
        "iterations": 6,
        "eval_every": 3,
    }
    base.update(over)
    return base


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"iterashuns": 3})
    with pytest.raises(ConfigError, match="config.bali"):
        config_from_dict({"bali": {"alfa": 0.1}})


@pytest.mark.parametrize("bad", [
    {"method": "sgld"},
    {"dataset": {"kind": "spirals"}},
    {"dataset": {"kind": "csv"}},
    {"iterations": -1},
    {"seeds": []},
    {"eval_every": 0},
    {"metrics": ["acc"]},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_shipped_configs_load():
    from pathlib import Path
    root = Path(__file__).resolve().parent.parent / "configs"
    for path in sorted(root.glob("*.yaml")):
        data = yaml.safe_load(path.read_text())
        csv_path = data.get("dataset", {}).get("path")
        if csv_path and not Path(csv_path).exists():
            # Real-data configs name files that are not shipped.
            with pytest.raises(ConfigError, match="does not exist"):
                load_config(path)
        else:
            assert isinstance(load_config(path), ExperimentConfig)


def test_zero_iterations_evaluates_initialisation(tmp_path):
    cfg = config_from_dict(_small(iterations=0))
    res = run_experiment(cfg, tmp_path)
    assert {r[2] for r in res.rows} == {0}
    assert {r[3] for r in res.rows} == {"rmse", "nll"}
    assert all(np.isfinite(r[4]) for r in res.rows)


def test_metrics_file_is_reproducible(tmp_path):
    cfg = config_from_dict(_small())
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    rows = _read(tmp_path / "a/metrics.csv")
    assert rows[0] == ["seed", "split", "iteration", "metric", "value"]
    assert sorted({int(r[2]) for r in rows[1:]}) == [0, 3, 6]
    assert len(_read(tmp_path / "a/timing.csv")) == 4


def test_sinc_grid_has_401_points(tmp_path):
    run_experiment(config_from_dict(_small()), tmp_path)
    rows = _read(tmp_path / "grid_seed0_split0.csv")
    assert rows[0] == ["x0", "mean0", "std0"]
    body = np.array(rows[1:], dtype=float)
    assert len(body) == 401
    assert body[0, 0] == -2.0 and body[-1, 0] == 2.0
    assert np.all(np.isfinite(body)) and np.all(body[:, 2] > 0)


def test_failing_cell_is_recorded_and_others_continue(tmp_path, monkeypatch):
    real = E.build_dataset

    def flaky(cfg, seed, split):
        if seed == 1:
            raise RuntimeError("boom")
        return real(cfg, seed, split)

    monkeypatch.setattr(E, "build_dataset", flaky)
    res = run_experiment(config_from_dict(_small(seeds=[0, 1, 2])), tmp_path)
    assert [(s, k) for s, k, _ in res.errors] == [(1, 0)]
    assert {r[0] for r in res.rows} == {0, 2}
    errs = _read(tmp_path / "errors.csv")
    assert errs[1][:2] == ["1", "0"] and "boom" in errs[1][2]


@pytest.mark.parametrize("method", ["map", "dropout"])
def test_baseline_methods_run(tmp_path, method):
    cfg = config_from_dict(_small(method=method, map={"batch_size": 8, "pred_samples": 4}))
    res = run_experiment(cfg, tmp_path)
    assert not res.errors
    mean, se = summarize(res.rows, "rmse")
    assert np.isfinite(mean) and se == 0.0


def test_classification_with_ood(tmp_path):
    cfg = config_from_dict({
        "dataset": {"kind": "two-moons", "n": 32, "test_n": 32, "ood_n": 40},
        "model": {"hidden": [8], "activation": "tanh"},
        "bali": {"sigma_r2": 100.0, "pred_samples": 8},
        "iterations": 2, "eval_every": 1,
        "metrics": ["acc", "nll", "ece", "ood_auc"],
    })
    res = run_experiment(cfg, tmp_path)
    assert not res.errors
    rows = _read(tmp_path / "grid_seed0_split0.csv")
    assert len(rows) - 1 == 81 * 81


def test_ood_points_keep_their_distance():
    X = np.zeros((1, 2))
    pts = ood_points(X, 200, 4.0, 1.5, RngStream(0))
    assert pts.shape == (200, 2)
    assert np.all(np.linalg.norm(pts, axis=1) > 1.5)
    assert np.all(np.abs(pts) <= 4.0)


def test_csv_regression_pipeline(tmp_path):
    gen = np.random.default_rng(0)
    X = gen.standard_normal((60, 3)) * [1, 5, 10] + 100
    y = X @ [0.5, -0.2, 0.1] + 0.1 * gen.standard_normal(60)
    path = tmp_path / "d.csv"
    with path.open("w") as fh:
        fh.write("a,b,c,y\n")
        for row, t in zip(X, y):
            fh.write(",".join(repr(float(v)) for v in (*row, t)) + "\n")
    cfg = config_from_dict({
        "dataset": {"kind": "csv", "path": str(path), "targets": ["y"]},
        "model": {"hidden": [8]},
        "iterations": 5, "eval_every": 5, "splits": 2,
    })
    res = run_experiment(cfg, tmp_path / "out")
    assert not res.errors
    assert {r[1] for r in res.rows} == {0, 1}
    assert not (tmp_path / "out/grid_seed0_split0.csv").exists()


# Command line.


def _write_cfg(tmp_path, **over):
    data = _small(**over)
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_cli_run(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, checkpoint=True)
    assert main(["run", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "o")]) == 0
    rows = _read(tmp_path / "o/metrics.csv")
    assert {r[0] for r in rows[1:]} == {"4"}
    assert (tmp_path / "o/checkpoint_seed4_split0.npz").exists()


def test_cli_gen_data_and_eval(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, checkpoint=True)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    data = tmp_path / "sinc.csv"
    assert main(["gen-data", "--name", "sinc", "--n", "20", "--seed", "1", "--out", str(data)]) == 0
    assert load_csv(data, CsvSchema(("y",))).n == 20
    capsys.readouterr()
    ck = tmp_path / "o/checkpoint_seed0_split0.npz"
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--samples", "4"]) == 0
    out = capsys.readouterr().out
    names = [line.split("\t")[0] for line in out.strip().splitlines()]
    assert names == ["rmse", "nll"]
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--metrics", "acc"]) == 2


def test_cli_check_and_errors(tmp_path, capsys):
    assert main(["check", "--suite", "kron"]) == 0
    assert "ok" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("iterashuns: 2\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "unknown keys" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    with pytest.raises(SystemExit):
        main(["check", "--suite", "nope"])


def test_cli_run_reports_failed_cells(tmp_path, monkeypatch):
    monkeypatch.setattr(E, "build_dataset", lambda *a: (_ for _ in ()).throw(RuntimeError("x")))
    assert main(["run", "--config", str(_write_cfg(tmp_path)), "--out", str(tmp_path / "o")]) == 1
