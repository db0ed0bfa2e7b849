import math
import threading

import numpy as np
import pytest

from dtoffload import nn
from dtoffload.agents import policy_gradient_dlogits
from dtoffload.config import make_rng


def fd_gradient(loss, flat, h=1e-5):
    g = np.zeros_like(flat)
    for i in range(flat.size):
        wp = flat.copy(); wp[i] += h
        wm = flat.copy(); wm[i] -= h
        g[i] = (loss(wp) - loss(wm)) / (2 * h)
    return g


def max_rel_err(a, b):
    denom = np.maximum.reduce([np.abs(a), np.abs(b), np.full_like(a, 1e-6)])
    return float(np.max(np.abs(a - b) / denom))


# -- forward ------------------------------------------------------------------

def test_zero_weights_uniform_policy():
    spec = nn.NetworkSpec(6, (4,), "policy")
    net = nn.MLP(spec, flat=np.zeros(nn.flat_size(nn.MLP(spec).shapes)))
    probs, _ = net.forward(np.ones((1, 6)))
    np.testing.assert_allclose(probs[0], [1 / 3] * 3)


def test_softmax_by_hand():
    probs = nn.softmax(np.array([[0.0, 0.0, math.log(2.0)]]))
    np.testing.assert_allclose(probs[0], [0.25, 0.25, 0.5], atol=1e-12)


def test_relu6_clamp():
    np.testing.assert_array_equal(nn.relu6(np.array([-1.0, 3.0, 9.0])),
                                  np.array([0.0, 3.0, 6.0]))


def test_forward_dimension_mismatch():
    net = nn.MLP(nn.NetworkSpec(6, (4,), "policy"), rng=make_rng(0, 0))
    with pytest.raises(ValueError):
        net.forward(np.ones((1, 7)))


def test_forward_pure_and_bitwise_repeatable():
    net = nn.MLP(nn.NetworkSpec(9, (8, 5), "value"), rng=make_rng(1, 0))
    x = make_rng(2, 0).standard_normal((3, 9))
    v1, _ = net.forward(x)
    v2, _ = net.forward(x)
    np.testing.assert_array_equal(v1, v2)


def test_policy_strictly_positive():
    rng = make_rng(3, 0)
    for _ in range(20):
        net = nn.MLP(nn.NetworkSpec(7, (6,), "policy"), rng=rng)
        probs, _ = net.forward(rng.standard_normal((4, 7)) * 3)
        assert np.all(probs > 0)


# -- entropy ------------------------------------------------------------------

def test_entropy_values():
    assert nn.entropy(np.array([1 / 3, 1 / 3, 1 / 3])) == pytest.approx(math.log(3))
    assert nn.entropy(np.array([1.0, 0.0, 0.0])) == 0.0
    assert nn.entropy(np.array([0.5, 0.25, 0.25])) == pytest.approx(1.5 * math.log(2))


def test_entropy_gradient_zero_at_uniform():
    # with zero advantage and phi=1 the dlogits reduce to the entropy gradient
    probs = np.full((1, 3), 1 / 3)
    d = policy_gradient_dlogits(probs, np.array([0]), np.zeros(1), phi=1.0)
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


# -- backward: finite differences -------------------------------------------

def test_gradient_check_composite_policy_loss():
    spec = nn.NetworkSpec(112, (32,), "policy")
    rng = make_rng(11, 0)
    net = nn.MLP(spec, rng=rng)
    x = rng.standard_normal((5, 112))
    actions = rng.integers(0, 3, 5)
    adv = rng.standard_normal(5)
    phi = 0.01

    def loss(flat):
        m = nn.MLP(spec, flat=flat)
        probs, _ = m.forward(x)
        logp = np.log(probs[np.arange(5), actions])
        return float(-(logp * adv).sum() - phi * nn.entropy(probs).sum())

    probs, cache = net.forward(x)
    g = net.backward(cache, policy_gradient_dlogits(probs, actions, adv, phi))
    assert max_rel_err(g, fd_gradient(loss, net.flat)) < 1e-4


def test_gradient_check_squared_td_loss():
    spec = nn.NetworkSpec(20, (16, 8), "value")
    rng = make_rng(12, 0)
    net = nn.MLP(spec, rng=rng)
    x = rng.standard_normal((6, 20))
    targets = rng.standard_normal(6)

    def loss(flat):
        m = nn.MLP(spec, flat=flat)
        v, _ = m.forward(x)
        return float(((targets - v) ** 2).sum())

    v, cache = net.forward(x)
    g = net.backward(cache, -2.0 * (targets - v))
    assert max_rel_err(g, fd_gradient(loss, net.flat)) < 1e-4


def test_gradient_check_elman_regressor():
    rng = make_rng(13, 0)
    reg = nn.ElmanRegressor(12, 7, (6,), chunk=3, rng=rng)
    x = rng.standard_normal((4, 12))
    y_t = rng.standard_normal(4)

    def loss(flat):
        m = nn.ElmanRegressor(12, 7, (6,), chunk=3, flat=flat)
        y, _ = m.forward(x)
        return float(((y - y_t) ** 2).sum())

    y, cache = reg.forward(x)
    g = reg.backward(cache, 2.0 * (y - y_t))
    assert max_rel_err(g, fd_gradient(loss, reg.flat)) < 1e-4


def test_zero_output_gradient_gives_zero_parameter_gradient():
    net = nn.MLP(nn.NetworkSpec(5, (4,), "policy"), rng=make_rng(14, 0))
    _, cache = net.forward(np.ones((2, 5)))
    g = net.backward(cache, np.zeros((2, 3)))
    np.testing.assert_array_equal(g, 0.0)


# -- optimizer / store --------------------------------------------------------

def test_rmsprop_zero_gradient_leaves_weights():
    store = nn.ParameterStore(np.array([1.0, -2.0]), [(2,)])
    store.apply_gradient(np.zeros(2), lr=0.1)
    w, version = store.snapshot()
    np.testing.assert_array_equal(w, [1.0, -2.0])
    assert version == 1


def test_rmsprop_constant_gradient_step_approaches_lr():
    store = nn.ParameterStore(np.zeros(1), [(1,)])
    g = np.array([0.3])
    lr = 1e-2
    prev, _ = store.snapshot()
    for _ in range(2000):
        nn.optimizer_step(store, g, lr)
    w1, _ = store.snapshot()
    nn.optimizer_step(store, g, lr)
    w2, _ = store.snapshot()
    # accumulator saturated at g^2: per-step displacement ~ lr
    assert abs(abs((w2 - w1)[0]) - lr) < 0.02 * lr


def test_store_gradient_length_guard():
    store = nn.ParameterStore(np.zeros(3), [(3,)])
    with pytest.raises(ValueError):
        store.apply_gradient(np.zeros(4), 0.1)


def test_version_counts_every_gradient_under_concurrency():
    store = nn.ParameterStore(np.zeros(64), [(64,)])
    per_thread = 250

    def pound():
        for _ in range(per_thread):
            store.apply_gradient(np.ones(64), 1e-6)

    threads = [threading.Thread(target=pound) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.version == 8 * per_thread


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = make_rng(15, 0)
    arrays = [rng.standard_normal((4, 3)), rng.standard_normal(7),
              np.array(2.5)]
    path = tmp_path / "w.ckpt"
    nn.save_checkpoint(str(path), arrays)
    loaded = nn.load_checkpoint(str(path))
    assert len(loaded) == 3
    for orig, back in zip(arrays, loaded):
        np.testing.assert_allclose(back, orig, atol=1e-6)  # float32 storage
    # byte layout is stable: saving the loaded arrays reproduces the file
    path2 = tmp_path / "w2.ckpt"
    nn.save_checkpoint(str(path2), loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        nn.load_checkpoint(str(path))
