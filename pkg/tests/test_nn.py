import numpy as np
import pytest

from utils.errors import ContractViolation
from utils.nn import (AdamState, Mlp, RunningMeanStd, adam_step, backward, clip_by_global_norm, cross_entropy,
                      forward, json_record, load_checkpoint, read_json_record, save_checkpoint)


def _objective(net, x, w):
    return float(np.sum(w * forward(net, x)[0]))


@pytest.mark.parametrize("sizes, activation", [
    ([4, 6, 5, 3], "tanh"),
    ([12, 256, 256, 8], "tanh"),    # policy
    ([12, 256, 256, 1], "tanh"),    # value
    ([24, 128, 128, 5], "relu"),    # estimator
    ([16, 20], "linear"),           # vision head
])
def test_backward_matches_finite_differences(sizes, activation):
    rng = np.random.default_rng(0)
    net = Mlp(sizes, activation, np.float64, rng)
    x = rng.standard_normal((5, sizes[0]))
    w = rng.standard_normal((5, sizes[-1]))
    _, cache = forward(net, x)
    grads, grad_x = backward(net, cache, w)

    eps = 1e-6
    if net.n_params <= 2000:
        checked = np.arange(net.n_params)
    else:
        checked = np.unique(np.concatenate([rng.choice(net.n_params, 600, replace=False), [0, net.n_params - 1]]))
    numeric = np.zeros(checked.size)
    for k, i in enumerate(checked):
        saved = net.params[i]
        net.params[i] = saved + eps
        up = _objective(net, x, w)
        net.params[i] = saved - eps
        down = _objective(net, x, w)
        net.params[i] = saved
        numeric[k] = (up - down) / (2 * eps)
    np.testing.assert_allclose(grads[checked], numeric, rtol=1e-4, atol=1e-6)

    numeric_x = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        numeric_x[idx] = (_objective(net, xp, w) - _objective(net, xm, w)) / (2 * eps)
    np.testing.assert_allclose(grad_x, numeric_x, rtol=1e-4, atol=1e-6)



def test_stale_cache_is_rejected():
    net = Mlp([3, 4, 2], "relu", np.float64, np.random.default_rng(1))
    _, cache = forward(net, np.ones((2, 3)))
    net.touch()
    with pytest.raises(ContractViolation, match="stale"):
        backward(net, cache, np.ones((2, 2)))


def test_shape_contracts():
    net = Mlp([3, 4, 2], "tanh", np.float64, np.random.default_rng(1))
    with pytest.raises(ContractViolation):
        forward(net, np.ones((2, 5)))
    _, cache = forward(net, np.ones((2, 3)))
    with pytest.raises(ContractViolation):
        backward(net, cache, np.ones((3, 2)))
    with pytest.raises(ContractViolation):
        net.set_params(np.zeros(3))
    with pytest.raises(ContractViolation):
        Mlp([3], "tanh")


def test_checkpoint_reload_is_bit_identical(tmp_path):
    rng = np.random.default_rng(2)
    net = Mlp([5, 8, 8, 2], "tanh", np.float32, rng)
    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    path = save_checkpoint(tmp_path / "net.tsnn", {"net": net, "arr": arr, "meta": json_record({"a": 1})})
    records = load_checkpoint(path)
    x = rng.standard_normal((4, 5))
    assert np.array_equal(records["net"](x), net(x))
    assert records["net"].dtype == np.float32
    assert np.array_equal(records["arr"], arr)
    assert read_json_record(records["meta"]) == {"a": 1}
    assert list(records) == ["net", "arr", "meta"]


def test_corrupt_checkpoints_are_rejected(tmp_path):
    path = tmp_path / "bad.tsnn"
    path.write_bytes(b"XXXX\x01\x00\x00\x00\x00\x00")
    with pytest.raises(ContractViolation):
        load_checkpoint(path)
    good = save_checkpoint(tmp_path / "good.tsnn", {"arr": np.zeros(100)})
    path.write_bytes(good.read_bytes()[:40])
    with pytest.raises(ContractViolation):
        load_checkpoint(path)


def test_adam_first_step_moves_by_learning_rate():
    params = np.zeros(3)
    state = AdamState.like(params, lr=0.01)
    adam_step(params, np.array([1.0, -2.0, 0.5]), state)
    assert params == pytest.approx([-0.01, 0.01, -0.01], abs=1e-6)
    assert state.t == 1
    with pytest.raises(ContractViolation):
        adam_step(params, np.zeros(2), state)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((5, 4))
    labels = np.array([0, 3, 1, 1, 2])
    loss, grad = cross_entropy(logits, labels)
    assert loss > 0
    eps = 1e-6
    for idx in np.ndindex(*logits.shape):
        lp, lm = logits.copy(), logits.copy()
        lp[idx] += eps
        lm[idx] -= eps
        numeric = (cross_entropy(lp, labels)[0] - cross_entropy(lm, labels)[0]) / (2 * eps)
        assert grad[idx] == pytest.approx(numeric, abs=1e-7)


def test_running_mean_std_merges_batches():
    rng = np.random.default_rng(4)
    data = rng.normal(3.0, 2.0, (1000, 2))
    stats = RunningMeanStd((2,))
    stats.update(data[:300])
    stats.update(data[300:])
    assert stats.mean == pytest.approx(data.mean(axis=0), rel=1e-4)
    assert stats.var == pytest.approx(data.var(axis=0), rel=1e-4)


def test_clip_by_global_norm():
    arrays, norm = clip_by_global_norm([np.array([3.0]), np.array([4.0])], 1.0)
    assert norm == pytest.approx(5.0)
    assert np.hypot(arrays[0][0], arrays[1][0]) == pytest.approx(1.0)
