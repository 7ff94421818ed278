import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtnrl.qnet import (Hyper, QNetwork, SchemaMismatch, TrainingDiverged, bellman_targets,
                        default_dims, q_value)


def numeric_grads(net, x, y, h=1e-6):
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = net.mse(x, y)
            p[i] = old - h
            down = net.mse(x, y)
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def near_kink(net, x, margin=1e-4):
    """True if some hidden pre-activation lies within ``margin`` of the ReLU kink,
    where central differences straddle the corner and stop approximating the gradient."""
    h = np.atleast_2d(x)
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w + b
        if np.abs(z).min() < margin:
            return True
        h = np.maximum(z, 0)
    return False


def smooth_inputs(net, rng, shape):
    x = rng.normal(size=shape)
    while near_kink(net, x):
        x = rng.normal(size=shape)
    return x


def rel_error(a, b):
    a, b = np.concatenate([x.ravel() for x in a]), np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def test_default_dims():
    assert default_dims(63) == [63, 630, 31, 1]


def test_zero_weights_give_zero():
    net = QNetwork([4, 3, 1])
    for p in net.params():
        p[...] = 0
    assert net.predict(np.ones(4)) == 0.0


def test_hand_computed_tiny_net():
    net = QNetwork([2, 2, 1])
    net.weights[0][...] = [[1.0, -2.0], [0.5, 3.0]]
    net.biases[0][...] = [0.5, 0.25]
    net.weights[1][...] = [[2.0], [-1.0]]
    net.biases[1][...] = [0.1]
    # hidden = relu([1.5, -1.75]) = [1.5, 0]; out = 3.0 + 0.1
    assert net.predict(np.array([1.0, 0.0])) == pytest.approx(3.1)


def test_predict_is_pure():
    net = QNetwork([5, 7, 1], seed=3)
    x = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_array_equal(net.predict(x), net.predict(x))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = QNetwork([6, 60, 3, 1], seed=seed)
    x = smooth_inputs(net, rng, (8, 6))
    y = rng.normal(size=8)
    _, g = net.loss_and_grads(x, y)
    assert rel_error(g, numeric_grads(net, x, y)) < 1e-4


def test_zero_gradient_adam_step_is_noop():
    net = QNetwork([3, 4, 1], seed=1)
    before = [p.copy() for p in net.params()]
    net.adam_update([np.zeros_like(p) for p in net.params()])
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)


def test_learning_rate_zero_keeps_weights():
    net = QNetwork([3, 4, 1], seed=1)
    before = [p.copy() for p in net.params()]
    x = np.ones((4, 3))
    net.train_epochs([(x, np.ones(4))], epochs=3, lr=0.0)
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)


def test_constant_target_converges():
    rng = np.random.default_rng(0)
    net = QNetwork([4, 40, 2, 1], hyper=Hyper(lr=1e-2), seed=0)
    batches = [(rng.uniform(size=(32, 4)), np.full(32, 3.0)) for _ in range(10)]
    trace = net.train_epochs(batches, epochs=40, val_split=0.0)
    assert trace.train[1] < trace.train[0]
    assert trace.train[-1] < 1e-3 * trace.train[0]


def test_validation_split_is_reported_only():
    rng = np.random.default_rng(1)
    batches = [(rng.uniform(size=(8, 3)), rng.uniform(size=8)) for _ in range(10)]
    net = QNetwork([3, 5, 1], seed=2)
    twin = net.copy()
    trace = net.train_epochs(batches, epochs=2, val_split=0.2)
    assert len(trace.val) == 2
    twin.train_epochs(batches[:8], epochs=2, val_split=0.0)
    for a, b in zip(net.params(), twin.params()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    net = QNetwork([2, 3, 1])
    with pytest.raises(TrainingDiverged, match="non-finite"):
        net.train_epochs([(np.ones((2, 2)), np.array([np.inf, 0.0]))], epochs=1, val_split=0.0)


def test_training_is_deterministic():
    rng = np.random.default_rng(5)
    batches = [(rng.normal(size=(16, 4)), rng.normal(size=16)) for _ in range(5)]
    a, b = QNetwork([4, 8, 1], seed=9), QNetwork([4, 8, 1], seed=9)
    a.train_epochs(batches, epochs=3)
    b.train_epochs(batches, epochs=3)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_relu_net_is_positively_homogeneous_without_biases():
    net = QNetwork([5, 9, 4, 1], seed=4)
    for b in net.biases:
        b[...] = 0
    x = np.abs(np.random.default_rng(2).normal(size=(6, 5)))
    np.testing.assert_allclose(net.predict(3.0 * x), 3.0 * net.predict(x))


def test_save_load_round_trip(tmp_path):
    net = QNetwork(default_dims(63), schema_hash="abc", seed=7)
    net.train_epochs([(np.random.default_rng(0).uniform(size=(32, 63)), np.full(32, -5.0))],
                     epochs=2, val_split=0.0)
    net.save(tmp_path / "m.qnet")
    back = QNetwork.load(tmp_path / "m.qnet", schema_hash="abc", n_inputs=63)
    x = np.random.default_rng(1).uniform(size=(100, 63))
    np.testing.assert_array_equal(net.predict(x), back.predict(x))
    np.testing.assert_array_equal(back._m, net._m)
    assert back.adam_step == net.adam_step


def test_tampered_hash_and_width_rejected(tmp_path):
    net = QNetwork([63, 4, 1], schema_hash="abc")
    net.save(tmp_path / "m.qnet")
    with pytest.raises(SchemaMismatch):
        QNetwork.load(tmp_path / "m.qnet", schema_hash="xyz")
    with pytest.raises(SchemaMismatch):
        QNetwork.load(tmp_path / "m.qnet", n_inputs=62)
    text = (tmp_path / "m.qnet").read_text().replace('"schema_hash": "abc"', '"schema_hash": "abd"')
    (tmp_path / "t.qnet").write_text(text)
    with pytest.raises(SchemaMismatch):
        QNetwork.load(tmp_path / "t.qnet", schema_hash="abc")


def test_q_value_checks_width():
    net = QNetwork([63, 4, 1])
    assert np.isfinite(q_value(net, np.zeros(49), np.zeros(14)))
    with pytest.raises(SchemaMismatch):
        q_value(net, np.zeros(49), np.zeros(13))


def _const_net(value):
    net = QNetwork([3, 2, 1])
    for p in net.params():
        p[...] = 0
    net.biases[-1][...] = value
    return net


def test_bellman_targets():
    net = _const_net(-10.0)
    rows = np.zeros((2, 3))
    y = bellman_targets(net, [-1.0, 0.0, -200.0], rows, np.array([0, 2, 2, 2]),
                        [False, True, True], gamma=0.99)
    np.testing.assert_allclose(y, [-10.9, 0.0, -200.0])


def test_bellman_takes_max_over_candidates():
    net = QNetwork([1, 1])
    net.weights[0][...] = 1.0
    rows = np.array([[1.0], [5.0], [-2.0], [7.0]])
    y = bellman_targets(net, [-1.0, -2.0], rows, np.array([0, 2, 4]), [False, False], gamma=0.5)
    np.testing.assert_allclose(y, [-1 + 2.5, -2 + 3.5])


def test_bellman_rejects_inconsistent_candidates():
    net = _const_net(0.0)
    with pytest.raises(ValueError, match="no next candidates"):
        bellman_targets(net, [-1.0], np.zeros((0, 3)), np.array([0, 0]), [False])
    with pytest.raises(ValueError, match="terminal"):
        bellman_targets(net, [0.0], np.zeros((1, 3)), np.array([0, 1]), [True])
