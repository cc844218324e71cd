"""Network layer: MLP forward/backward, Gaussian head, Adam, checkpoints."""

import math

import numpy as np
import pytest

from curapush.nets import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    GaussianPolicy,
    Mlp,
    adam_step,
    load_arrays,
    save_arrays,
)
from helpers import fd_grads, max_rel_err


# --- forward -----------------------------------------------------------------

def test_zero_weights_output_bias():
    net = Mlp([3, 4, 2], seed=0)
    for w in net.weights:
        w[...] = 0.0
    net.biases[-1][...] = np.array([1.5, -0.25])
    rng = np.random.default_rng(0)
    for _ in range(5):
        y = net.forward(rng.normal(size=3))
        assert np.array_equal(y, np.array([1.5, -0.25]))


def test_single_linear_layer_exact():
    net = Mlp([3, 2], seed=1)
    x = np.array([0.3, -1.2, 2.0])
    expect = net.weights[0] @ x + net.biases[0]
    assert np.allclose(net.forward(x), expect, atol=0, rtol=0)


def straight_line_forward(net, x):
    """Duplicate evaluator: plain loops, no shared code with Mlp.forward."""
    a = [float(xi) * float(si) for xi, si in zip(x, net.input_scale)]
    n_layers = len(net.weights)
    for li in range(n_layers):
        w = net.weights[li]
        b = net.biases[li]
        z = []
        for row in range(w.shape[0]):
            acc = float(b[row])
            for col in range(w.shape[1]):
                acc += float(w[row, col]) * a[col]
            z.append(acc)
        if li < n_layers - 1:
            a = [math.tanh(v) for v in z]
        else:
            a = z
    return np.array([v * net.output_scale for v in a])


def test_deep_net_matches_duplicate_evaluator():
    rng = np.random.default_rng(2)
    for sizes in ([4, 8, 3], [5, 16, 16, 2], [3, 1]):
        net = Mlp(sizes, seed=int(rng.integers(1000)),
                  input_scale=rng.uniform(0.1, 2.0, size=sizes[0]),
                  output_scale=float(rng.uniform(0.5, 5.0)))
        for _ in range(5):
            x = rng.normal(size=sizes[0])
            assert np.allclose(net.forward(x), straight_line_forward(net, x),
                               rtol=1e-12, atol=1e-12)


def test_batched_forward_matches_rowwise():
    # Equal up to BLAS summation-order noise; bitwise equality only holds when
    # shapes match, which is what the determinism tests rely on.
    net = Mlp([4, 8, 2], seed=3)
    rng = np.random.default_rng(3)
    xs = rng.normal(size=(6, 4))
    ys = net.forward(xs)
    for i in range(6):
        assert np.allclose(ys[i], net.forward(xs[i]), rtol=1e-10, atol=1e-12)


def test_forward_is_pure():
    net = Mlp([3, 5, 2], seed=4)
    before = [p.copy() for p in net.params]
    net.forward(np.ones(3))
    for a, b in zip(net.params, before):
        assert np.array_equal(a, b)


# --- backward ----------------------------------------------------------------

def test_backward_requires_cache():
    net = Mlp([2, 2], seed=5)
    with pytest.raises(ValueError):
        net.backward(None, np.ones(2))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    for sizes in ([4, 8, 3], [5, 12, 12, 2], [3, 1], [2, 7, 1]):
        net = Mlp(sizes, seed=int(rng.integers(1000)),
                  input_scale=rng.uniform(0.5, 1.5, size=sizes[0]),
                  output_scale=float(rng.uniform(0.5, 3.0)))
        x = rng.normal(size=(3, sizes[0]))
        gout = rng.normal(size=(3, sizes[-1]))

        def loss():
            return float(np.sum(net.forward(x) * gout))

        _, cache = net.forward_cache(x)
        analytic, _ = net.backward(cache, gout)
        numeric = fd_grads(loss, net.params)
        assert max_rel_err(analytic, numeric) < 1e-4


def test_backward_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    net = Mlp([4, 9, 2], seed=8, input_scale=rng.uniform(0.5, 2.0, size=4))
    x = rng.normal(size=4)
    gout = rng.normal(size=2)

    def loss():
        return float(np.sum(net.forward(x) * gout))

    _, cache = net.forward_cache(x)
    _, grad_in = net.backward(cache, gout)
    numeric = fd_grads(loss, [x])[0]
    assert max_rel_err([grad_in], [numeric]) < 1e-4


def test_backward_zero_grad_out():
    net = Mlp([3, 6, 2], seed=9)
    _, cache = net.forward_cache(np.ones((2, 3)))
    grads, grad_in = net.backward(cache, np.zeros((2, 2)))
    for g in grads:
        assert np.all(g == 0.0)
    assert np.all(grad_in == 0.0)


def test_backward_sums_over_batch():
    net = Mlp([3, 5, 2], seed=10)
    rng = np.random.default_rng(10)
    xs = rng.normal(size=(2, 3))
    gout = rng.normal(size=(2, 2))
    _, cache = net.forward_cache(xs)
    joint, _ = net.backward(cache, gout)
    parts = []
    for i in range(2):
        _, ci = net.forward_cache(xs[i])
        gi, _ = net.backward(ci, gout[i])
        parts.append(gi)
    for j, a, b in zip(joint, parts[0], parts[1]):
        assert np.allclose(j, a + b, rtol=1e-12, atol=1e-14)


def test_backward_mutates_nothing():
    net = Mlp([3, 5, 2], seed=11)
    before = [p.copy() for p in net.params]
    _, cache = net.forward_cache(np.ones(3))
    net.backward(cache, np.ones(2))
    for a, b in zip(net.params, before):
        assert np.array_equal(a, b)


# --- gaussian head -------------------------------------------------------------

def test_log_prob_at_mean_std_one():
    net = Mlp([3, 4], seed=12)
    pol = GaussianPolicy(net, log_std_init=0.0)
    obs = np.array([0.2, -0.1, 0.4])
    mean = pol.mean(obs)
    lp = pol.log_prob(obs, mean)
    assert lp == pytest.approx(-2.0 * math.log(2 * math.pi), abs=1e-12)


def test_sample_deterministic_under_seed():
    net = Mlp([3, 4], seed=13)
    pol = GaussianPolicy(net)
    obs = np.array([0.1, 0.2, 0.3])
    a1, lp1 = pol.sample(obs, np.random.default_rng(42))
    a2, lp2 = pol.sample(obs, np.random.default_rng(42))
    assert np.array_equal(a1, a2)
    assert lp1 == lp2


def test_sample_log_prob_recomputes_bitwise():
    net = Mlp([5, 8, 4], seed=14)
    pol = GaussianPolicy(net)
    rng = np.random.default_rng(14)
    obs = rng.normal(size=(6, 5))
    actions, lp = pol.sample(obs, rng)
    assert np.array_equal(pol.log_prob(obs, actions), lp)


def test_entropy_closed_form():
    net = Mlp([2, 3], seed=15)
    pol = GaussianPolicy(net, log_std_init=-0.5)
    expect = 3 * (-0.5) + 3 * (0.5 + 0.5 * math.log(2 * math.pi))
    assert pol.entropy() == pytest.approx(expect, abs=1e-12)


def test_log_prob_grads_match_finite_differences():
    rng = np.random.default_rng(16)
    net = Mlp([4, 6, 2], seed=17)
    pol = GaussianPolicy(net, log_std_init=-0.4)
    obs = rng.normal(size=(5, 4))
    actions = rng.normal(size=(5, 2))
    dlogp = rng.normal(size=5)
    dent = 0.37

    def loss():
        lp = pol.log_prob(obs, actions)
        return float(np.sum(dlogp * lp) + dent * pol.entropy())

    logp, mlp_grads, ls_grad = pol.log_prob_grads(obs, actions, dlogp, dentropy=dent)
    assert np.array_equal(logp, pol.log_prob(obs, actions))
    numeric = fd_grads(loss, pol.mlp.params + [pol.log_std])
    assert max_rel_err(mlp_grads + [ls_grad], numeric) < 1e-4


def test_log_std_clamp_zeroes_gradient_outside_range():
    net = Mlp([2, 1], seed=18)
    pol = GaussianPolicy(net)
    pol.log_std[...] = np.array([LOG_STD_MIN - 1.0])
    obs = np.array([[0.1, 0.2]])
    act = np.array([[0.3]])
    _, _, ls_grad = pol.log_prob_grads(obs, act, np.array([1.0]), dentropy=1.0)
    assert np.all(ls_grad == 0.0)
    pol.log_std[...] = np.array([LOG_STD_MAX + 1.0])
    _, _, ls_grad = pol.log_prob_grads(obs, act, np.array([1.0]), dentropy=1.0)
    assert np.all(ls_grad == 0.0)


# --- adam ----------------------------------------------------------------------

def test_adam_zero_gradient_fixed_point():
    net = Mlp([3, 4, 2], seed=19)
    st = AdamState(net.params, lr=1e-2)
    before = [p.copy() for p in net.params]
    adam_step(net.params, [np.zeros_like(p) for p in net.params], st)
    for a, b in zip(net.params, before):
        assert np.array_equal(a, b)


def test_adam_first_step_closed_form():
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -0.7, 0.0])
    st = AdamState([p], lr=1e-3)
    expect = p - 1e-3 * g / (np.abs(g) + 1e-8)
    adam_step([p], [g], st)
    assert np.allclose(p, expect, rtol=0, atol=1e-15)
    assert st.t == 1


def test_adam_rejects_nan_gradient():
    p = np.array([1.0])
    st = AdamState([p])
    with pytest.raises(ValueError):
        adam_step([p], [np.array([float("nan")])], st)
    assert p[0] == 1.0


def test_adam_quadratic_bowl_monotone_after_warmup():
    # lr small relative to the distance so 200 steps stay in transit; near the
    # minimum Adam's sign-like steps would oscillate and break monotonicity.
    target = np.array([0.7, -1.3, 2.0, 0.4])
    p = np.zeros(4)
    st = AdamState([p], lr=1e-3)
    losses = []
    for _ in range(200):
        g = 2.0 * (p - target)
        adam_step([p], [g], st)
        losses.append(float(np.sum((p - target) ** 2)))
    for i in range(10, 199):
        assert losses[i + 1] <= losses[i] + 1e-12
    assert losses[-1] < 0.8 * losses[0]


# --- serialization ---------------------------------------------------------------

def test_save_load_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(20)
    entries = {
        "a": rng.normal(size=(3, 4)),
        "b": rng.normal(size=7),
        "scalar": np.array([2.5]),
    }
    path = tmp_path / "arrays.net"
    save_arrays(path, entries)
    back = load_arrays(path)
    assert list(back.keys()) == list(entries.keys())
    for k in entries:
        assert np.array_equal(back[k], entries[k])


def test_checkpoint_forward_bit_identical(tmp_path):
    rng = np.random.default_rng(21)
    net = Mlp([4, 8, 8, 3], seed=22,
               input_scale=rng.uniform(0.5, 2.0, size=4), output_scale=3.0)
    pol = GaussianPolicy(net, log_std_init=-0.7)
    path = tmp_path / "pol.net"
    save_arrays(path, pol.to_entries())
    back = GaussianPolicy.from_entries(load_arrays(path))
    x = rng.normal(size=(5, 4))
    assert np.array_equal(back.mean(x), pol.mean(x))
    assert np.array_equal(back.log_std, pol.log_std)


def test_adam_state_roundtrip(tmp_path):
    net = Mlp([3, 5, 2], seed=23)
    st = AdamState(net.params, lr=2e-3)
    rng = np.random.default_rng(23)
    for _ in range(3):
        adam_step(net.params, [rng.normal(size=p.shape) for p in net.params], st)
    path = tmp_path / "opt.net"
    save_arrays(path, st.to_entries())
    back = AdamState.from_entries(load_arrays(path), net.params)
    assert back.t == st.t
    assert back.lr == st.lr
    for a, b in zip(back.m + back.v, st.m + st.v):
        assert np.array_equal(a, b)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.net"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_arrays(path)
