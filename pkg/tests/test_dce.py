"""Quantile collision estimator: levels, statistics, targets, energy loss."""

import numpy as np
import pytest

from curapush.dce import (
    GAMMA_C,
    N_QUANTILES,
    bellman_targets,
    energy_distance_loss,
    energy_distance_loss_grad,
    predict_quantiles,
    quantile_levels,
    risk_and_uncertainty,
)
from curapush.nets import Mlp
from helpers import fd_grads, max_rel_err


def test_quantile_levels_midpoints():
    tau = quantile_levels()
    assert tau.shape == (50,)
    assert tau[0] == pytest.approx(0.01, abs=1e-15)
    assert tau[-1] == pytest.approx(0.99, abs=1e-15)
    assert np.allclose(np.diff(tau), 0.02)
    assert np.all((tau > 0) & (tau < 1))


def test_constants():
    assert N_QUANTILES == 50
    assert GAMMA_C == 0.9


def test_predict_fresh_net_near_zero():
    net = Mlp([8, 16, N_QUANTILES], seed=0, final_gain=1e-3)
    q = predict_quantiles(net, np.full(8, 0.5))
    assert q.shape == (N_QUANTILES,)
    assert np.all(np.abs(q) < 1e-2)


def test_predict_deterministic_and_unsorted():
    net = Mlp([4, 8, N_QUANTILES], seed=1)
    obs = np.array([0.3, -0.2, 0.9, 0.1])
    q1 = predict_quantiles(net, obs)
    q2 = predict_quantiles(net, obs)
    assert np.array_equal(q1, q2)
    # Raw outputs: a generic random net is not monotone, and stays that way.
    assert np.any(np.diff(q1) < 0)


def test_risk_uncertainty_constant():
    # 0.5 is exactly representable; 0.3 leaves summation residue ~1e-33.
    r, u = risk_and_uncertainty(np.full(50, 0.5))
    assert r == 0.5
    assert u == 0.0
    r, u = risk_and_uncertainty(np.full(50, 0.3))
    assert r == pytest.approx(0.3, abs=1e-15)
    assert u == pytest.approx(0.0, abs=1e-30)


def test_risk_uncertainty_two_point():
    r, u = risk_and_uncertainty(np.array([0.0, 1.0]))
    assert r == 0.5
    assert u == 0.25


def test_risk_uncertainty_batched():
    qs = np.stack([np.full(50, 0.5), np.linspace(0, 1, 50)])
    r, u = risk_and_uncertainty(qs)
    assert r.shape == (2,)
    assert u[0] == 0.0
    assert u[1] > 0.0
    assert u[1] == pytest.approx(np.var(np.linspace(0, 1, 50)), abs=1e-15)


def test_uncertainty_zero_iff_constant():
    rng = np.random.default_rng(2)
    for _ in range(50):
        q = rng.normal(size=50)
        _, u = risk_and_uncertainty(q)
        spread = float(q.max() - q.min())
        assert (u < 1e-12) == (spread < 1e-6)


def test_bellman_terminal_collision():
    nq = np.linspace(0, 5, N_QUANTILES)
    t = bellman_targets(1.0, 1.0, nq)
    assert np.all(t == 1.0)


def test_bellman_absorbing_safe():
    t = bellman_targets(0.0, 0.0, np.zeros(N_QUANTILES))
    assert np.all(t == 0.0)


def test_bellman_clamp_saturation():
    t = bellman_targets(1.0, 0.0, np.full(N_QUANTILES, 10.0))
    assert np.all(t == 10.0)


def test_bellman_plain_recursion():
    nq = np.array([0.0, 0.5, 1.0])
    t = bellman_targets(1.0, 0.0, nq)
    assert np.allclose(t, [1.0, 1.45, 1.9])


def test_bellman_targets_always_in_range():
    rng = np.random.default_rng(3)
    for _ in range(200):
        nq = rng.uniform(-5, 20, size=N_QUANTILES)
        c = float(rng.integers(0, 2))
        term = float(rng.integers(0, 2))
        t = bellman_targets(c, term, nq)
        assert np.all(t >= 0.0)
        assert np.all(t <= 10.0)


def test_bellman_batched_shapes():
    rng = np.random.default_rng(4)
    nq = rng.uniform(0, 2, size=(6, N_QUANTILES))
    t = bellman_targets(np.zeros(6), np.zeros(6), nq)
    assert t.shape == (6, N_QUANTILES)
    assert np.allclose(t, GAMMA_C * nq)


def test_energy_loss_identical_multisets_zero():
    rng = np.random.default_rng(5)
    p = rng.normal(size=50)
    t = rng.permutation(p)
    assert energy_distance_loss(p, t) == pytest.approx(0.0, abs=1e-12)


def test_energy_loss_single_atom():
    assert energy_distance_loss(np.array([0.0]), np.array([1.0])) == pytest.approx(2.0)


def test_energy_loss_nonnegative_and_symmetric():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        p = rng.normal(size=n)
        t = rng.normal(size=n)
        l1 = energy_distance_loss(p, t)
        assert l1 >= -1e-12
        assert l1 == pytest.approx(energy_distance_loss(t, p), abs=1e-12)


def test_energy_loss_shape_mismatch():
    with pytest.raises(ValueError):
        energy_distance_loss(np.zeros(3), np.zeros(4))


def test_energy_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    # Spacing >> fd step keeps every |.| term away from its kink.
    p = np.sort(rng.normal(size=10)) * 3.0 + np.arange(10) * 0.5
    t = np.sort(rng.normal(size=10)) * 3.0 + np.arange(10) * 0.5 + 0.13
    _, grad = energy_distance_loss_grad(p, t)

    def loss():
        return energy_distance_loss(p, t)

    numeric = fd_grads(loss, [p])[0]
    assert max_rel_err([grad], [numeric]) < 1e-3


def test_energy_loss_gradient_zero_at_ties():
    p = np.full(5, 0.7)
    _, grad = energy_distance_loss_grad(p, p.copy())
    assert np.all(grad == 0.0)


def test_energy_loss_batched_mean():
    rng = np.random.default_rng(8)
    p = rng.normal(size=(4, 6))
    t = rng.normal(size=(4, 6))
    total = energy_distance_loss(p, t)
    singles = [energy_distance_loss(p[i], t[i]) for i in range(4)]
    assert total == pytest.approx(np.mean(singles), abs=1e-12)


def test_energy_loss_batched_gradient_matches_singles():
    rng = np.random.default_rng(9)
    p = rng.normal(size=(3, 5)) * 2.0
    t = rng.normal(size=(3, 5)) * 2.0
    _, g = energy_distance_loss_grad(p, t)
    for i in range(3):
        _, gi = energy_distance_loss_grad(p[i], t[i])
        assert np.allclose(g[i], gi / 3.0, atol=1e-15)


def test_trained_risk_matches_geometric_series():
    # Collision is certain k steps ahead, so risk from state i must approach
    # gamma_c^(3-i) exactly (one discounted unit cost at the collision step).
    from chain_mdp import TerminalChain, train_dce_on_transitions

    chain = TerminalChain([0.0, 0.0, 0.0, 1.0])
    assert np.allclose(chain.analytic_risk(), [GAMMA_C ** 3, GAMMA_C ** 2, GAMMA_C, 1.0])
    net = train_dce_on_transitions(chain.sample_transitions, chain.n,
                                   iterations=250, seed=3)
    risk, _ = risk_and_uncertainty(net.forward(chain.one_hot(np.arange(4))))
    assert np.allclose(risk, chain.analytic_risk(), atol=0.05)
