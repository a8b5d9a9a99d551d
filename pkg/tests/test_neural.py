import math

import numpy as np
import pytest

from pushrec.neural import (Adam, CheckpointError, Mlp, ShapeError, decode_arrays, encode_arrays, gaussian_kl,
                            gaussian_logprob, init_mlp, load_arrays, make_policy, make_value, mlp_arrays,
                            mlp_from_arrays, save_arrays)


def fd_check(net: Mlp, x, dout, n_coords: int, rng) -> float:
    """Worst relative error of backward() against central differences on random coordinates."""
    grads, _ = net.backward(net.forward(x)[1], dout)
    params = net.params
    worst = 0.0
    for _ in range(n_coords):
        k = rng.integers(len(params))
        idx = tuple(rng.integers(s) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + 1e-5
        up = np.sum(net(x) * dout)
        params[k][idx] = old - 1e-5
        down = np.sum(net(x) * dout)
        params[k][idx] = old
        fd = (up - down) / 2e-5
        worst = max(worst, abs(fd - grads[k][idx]) / max(abs(fd), abs(grads[k][idx]), 1e-8))
    return worst


def test_zero_weights_output_bias():
    net = Mlp([np.zeros((3, 2))], [np.array([0.5, -1.0])])
    assert np.array_equal(net(np.ones(3)), [0.5, -1.0])


def test_relu_blocks_negative_preactivation():
    net = Mlp([np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    out, cache = net.forward(np.array([-5.0]))
    assert cache[1][0, 0] == 0.0 and out[0] == 0.0
    grads, dx = net.backward(cache, np.ones(1))
    assert grads[0][0, 0] == 0.0 and dx[0] == 0.0


def test_linear_weight_gradient_is_input():
    net = Mlp([np.zeros((3, 1))], [np.zeros(1)])
    x = np.array([1.0, -2.0, 0.5])
    grads, _ = net.backward(net.forward(x)[1], np.ones(1))
    assert np.array_equal(grads[0][:, 0], x)
    assert grads[1][0] == 1.0


def test_shape_errors():
    net = init_mlp([4, 3, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net(np.ones(5))
    with pytest.raises(ShapeError):
        net.backward(net.forward(np.ones(4))[1], np.ones(3))
    with pytest.raises(ShapeError):
        Mlp([np.ones((2, 3)), np.ones((4, 1))], [np.ones(3), np.ones(1)])


def test_forward_finite_and_deterministic():
    rng = np.random.default_rng(1)
    net = init_mlp([28, 128, 64, 8], rng)
    x = rng.normal(size=(50, 28))
    a, b = net(x), net(x)
    assert np.all(np.isfinite(a))
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("kind", ["policy", "value"])
def test_backward_matches_finite_differences(kind):
    rng = np.random.default_rng(2)
    if kind == "policy":
        net = make_policy(28, 8, (128, 64), rng).mean
        net.weights[-1] *= 100  # undo the small output scale so every layer matters
    else:
        net = make_value(28, (128, 64), rng)
    x = rng.normal(size=(16, 28))
    dout = rng.normal(size=(16, net.sizes[-1]))
    assert fd_check(net, x, dout, 150, rng) < 1e-4


def test_logprob_values():
    assert gaussian_logprob([0.0], [0.0], [1.0]) == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5)
    assert gaussian_logprob([0.0], [0.0], [1.0]) == pytest.approx(-1.4189, abs=1e-4)
    ls = np.array([0.1, -0.3])
    assert gaussian_logprob([1.0, 2.0], ls, [1.0, 2.0]) == pytest.approx(-np.sum(ls + 0.5 * math.log(2 * math.pi)))
    wide = gaussian_logprob([0.0, 0.0], ls + math.log(2), [0.0, 0.0])
    assert gaussian_logprob([0.0, 0.0], ls, [0.0, 0.0]) - wide == pytest.approx(2 * math.log(2))


def test_logprob_integrates_to_one():
    mu, ls = 0.3, math.log(0.7)
    x = np.linspace(mu - 8 * 0.7, mu + 8 * 0.7, 20001)
    dens = np.exp(gaussian_logprob(np.full((x.size, 1), mu), np.array([ls]), x[:, None]))
    assert abs(np.trapezoid(dens, x) - 1.0) < 1e-6


def test_kl_zero_for_identical_and_positive_otherwise():
    m, ls = np.array([0.2, -0.1]), np.array([-1.0, -0.5])
    assert gaussian_kl(m, ls, m, ls) == pytest.approx(0.0, abs=1e-15)
    assert gaussian_kl(m, ls, m + 0.1, ls) > 0


def test_policy_act_mean_and_sample():
    rng = np.random.default_rng(3)
    pol = make_policy(5, 2, (8,), rng)
    obs = rng.normal(size=5)
    a, lp = pol.act(obs)
    assert np.array_equal(a, pol.mean(obs))
    assert lp == pytest.approx(gaussian_logprob(a, pol.log_std, a))
    assert np.allclose(np.exp(pol.log_std), 0.3)
    a2, _ = pol.act(obs, np.random.default_rng(0))
    assert not np.array_equal(a, a2)


def test_adam_first_step_is_sign():
    p = [np.array([1.0, -2.0, 3.0])]
    Adam(lr=1e-4).step(p, [np.array([0.5, -7.0, 1e-3])])
    assert np.allclose(p[0], [1.0 - 1e-4, -2.0 + 1e-4, 3.0 - 1e-4], atol=1e-9)


def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    Adam().step(p, [np.zeros(2)])
    assert np.array_equal(p[0], [1.0, -2.0])


def test_adam_moments_decay_under_zero_gradient():
    opt = Adam()
    p = [np.array([1.0])]
    opt.step(p, [np.array([2.0])])
    m_before, v_before = opt.m[0].copy(), opt.v[0].copy()
    opt.step(p, [np.zeros(1)])
    assert opt.m[0][0] == pytest.approx(0.9 * m_before[0])
    assert opt.v[0][0] == pytest.approx(0.999 * v_before[0])


def test_adam_bowl_converges():
    opt = Adam(lr=0.01)
    x = [np.array([2.0])]
    hist = [2.0]
    for _ in range(500):
        opt.step(x, [2 * x[0]])
        hist.append(abs(x[0][0]))
    hist = np.array(hist)
    reach = int(np.argmax(hist < 0.2))
    assert 0 < reach
    assert np.all(np.diff(hist[:reach + 1]) < 0)
    assert np.all(hist[reach:] < 0.2)


def test_adam_order_invariant():
    g = [np.array([0.1, -0.2]), np.array([[1.0, 2.0]])]
    p1 = [np.array([1.0, 1.0]), np.array([[0.0, 0.0]])]
    p2 = [q.copy() for q in reversed(p1)]
    Adam().step(p1, g)
    Adam().step(p2, list(reversed(g)))
    assert all(np.array_equal(a, b) for a, b in zip(p1, reversed(p2)))


def test_checkpoint_round_trip(tmp_path):
    net = init_mlp([4, 6, 2], np.random.default_rng(4))
    arrays = {**mlp_arrays("policy", net), "scalar": np.array(3.5)}
    save_arrays(tmp_path / "c.bin", arrays, {"step": 7})
    back, meta = load_arrays(tmp_path / "c.bin")
    assert meta == {"step": 7}
    assert back["scalar"] == 3.5
    net2 = mlp_from_arrays("policy", back)
    x = np.ones(4)
    assert net2(x).tobytes() == net(x).tobytes()


def test_checkpoint_errors(tmp_path):
    blob = encode_arrays({"a": np.arange(6.0).reshape(2, 3)})
    with pytest.raises(CheckpointError):
        decode_arrays(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        decode_arrays(blob[:-3])
    with pytest.raises(CheckpointError):
        decode_arrays(blob + b"\0")
    with pytest.raises(FileNotFoundError, match="checkpoint not found"):
        load_arrays(tmp_path / "missing.bin")
    with pytest.raises(CheckpointError):
        mlp_from_arrays("value", {"a": np.zeros(1)})
