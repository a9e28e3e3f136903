import numpy as np
import pytest

from bali.checkpoint import load_checkpoint, save_checkpoint
from bali.datasets import Standardizer, gen_sinc, gen_two_moons
from bali.inference import BaliConfig, init_model, predict, train_step
from bali.linalg import RngStream
from bali.network import mlp


def _steps(model, X, y, n, seed):
    order = RngStream(seed, 1)
    for _ in range(n):
        idx = order.permutation(len(X))[:8]
        train_step(model, X[idx], y[idx])


@pytest.mark.parametrize("trained", [0, 5])
def test_resumed_run_is_bitwise_identical(tmp_path, trained):
    data = gen_sinc(64, RngStream(0))
    cfg = BaliConfig(n_eff=64, batch_size=8, sigma_r2=100.0, total_iters=20, seed=3)
    model = init_model(mlp(1, [16, 16], 1, "tanh"), cfg)
    _steps(model, data.X, data.y, trained, 0)
    path = save_checkpoint(model, tmp_path / "m.npz")
    restored, xs, ys = load_checkpoint(path)
    assert xs is None and ys is None
    _steps(model, data.X, data.y, 10, 1)
    _steps(restored, data.X, data.y, 10, 1)
    for a, b in zip(model.layers, restored.layers):
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.post.M, b.post.M)
        np.testing.assert_array_equal(a.post.U, b.post.U)
    pa = predict(model, data.X[:5], 4)
    pb = predict(restored, data.X[:5], 4)
    np.testing.assert_array_equal(pa.mean, pb.mean)


def test_classification_checkpoint_keeps_standardizers(tmp_path):
    data = gen_two_moons(32, 0.2, RngStream(0))
    cfg = BaliConfig(task="softmax", n_eff=32, batch_size=8, total_iters=5)
    model = init_model(mlp(2, [8], 2, "tanh"), cfg)
    _steps(model, data.X, data.y, 3, 0)
    xs = Standardizer.fit(data.X)
    path = save_checkpoint(model, tmp_path / "c.npz", x_stats=xs)
    restored, xs2, ys2 = load_checkpoint(path)
    np.testing.assert_array_equal(xs2.mean, xs.mean)
    assert ys2 is None
    assert restored.config == model.config
    assert [e.t for e in restored.emas] == [3, 3]
