"""Quantile-based distributional estimator of discounted future collision.

A network maps an observation to N quantile values of the random variable
C = sum_k gamma_c^k * c_{t+k} (collision indicators until episode end). The
quantile levels are fixed midpoints (i - 0.5)/N; predicted values are used as
stored, never sorted, so early training can emit non-monotone sets without
masking that fact. Risk is the quantile mean, uncertainty the population
variance. Training pairs distributional Bellman targets with an
energy-distance loss between the two N-atom sets.
"""

from __future__ import annotations

import numpy as np

N_QUANTILES = 50
GAMMA_C = 0.9


def quantile_levels(n: int = N_QUANTILES) -> np.ndarray:
    """Midpoint levels tau_i = (i - 0.5)/n for i = 1..n, strictly inside (0, 1)."""
    return (np.arange(1, n + 1) - 0.5) / n


def predict_quantiles(net, obs) -> np.ndarray:
    """Quantile values for one observation (N,) or a batch (B, N). Raw net
    output: no sorting, no clamping."""
    return net.forward(obs)


def risk_and_uncertainty(quantiles: np.ndarray):
    """Mean and population variance of a quantile set (last axis)."""
    q = np.asarray(quantiles, dtype=float)
    risk = q.mean(axis=-1)
    uncertainty = ((q - np.expand_dims(risk, -1)) ** 2).mean(axis=-1)
    return risk, uncertainty


def cost_ceiling(gamma_c: float = GAMMA_C) -> float:
    """Upper bound of the discounted collision sum, 1/(1 - gamma_c).

    Rounded to 9 decimals so round discounts land on the closed-form value
    (0.9 -> exactly 10.0 rather than two ulps above it); clamped targets then
    really stay inside the stated range.
    """
    return round(1.0 / (1.0 - gamma_c), 9)


def bellman_targets(cost, terminal, next_quantiles, gamma_c: float = GAMMA_C) -> np.ndarray:
    """Distributional one-step targets: c + gamma_c * z' per atom.

    Terminal transitions bootstrap a zero next-distribution (timeout and
    collision terminals alike). Targets are clamped to [0, cost_ceiling],
    the attainable range of C. Callers must pass next_quantiles produced by a
    frozen snapshot; no gradient flows through targets.
    """
    cost = np.asarray(cost, dtype=float)
    cont = 1.0 - np.asarray(terminal, dtype=float)
    nq = np.asarray(next_quantiles, dtype=float)
    t = cost[..., None] + gamma_c * nq * cont[..., None]
    return np.clip(t, 0.0, cost_ceiling(gamma_c))


def energy_distance_loss(pred_quantiles, target_quantiles) -> float:
    """Energy distance between two equal-mass atom sets.

    L = 2 E|z_i - Tz_j| - E|Tz_i - Tz_j| - E|z_i - z_j| with expectations
    uniform over all N^2 index pairs. Nonnegative, symmetric, zero iff the
    sets define the same distribution. Batched inputs (B, N) return the mean.
    """
    loss, _ = energy_distance_loss_grad(pred_quantiles, target_quantiles)
    return loss


def energy_distance_loss_grad(pred_quantiles, target_quantiles):
    """Energy-distance loss and its gradient wrt the predicted atoms.

    For batched input the loss is the batch mean and the gradient is of that
    mean. sign(0) = 0 keeps tied atoms at a valid subgradient. Atoms are
    sorted before the pairwise terms so that equal multisets cancel to an
    exact 0.0 rather than to summation-order noise; the gradient is scattered
    back through the inverse permutation.
    """
    p_raw = np.atleast_2d(np.asarray(pred_quantiles, dtype=float))
    t = np.atleast_2d(np.asarray(target_quantiles, dtype=float))
    if p_raw.shape != t.shape:
        raise ValueError("pred and target quantile shapes differ: %s vs %s"
                         % (p_raw.shape, t.shape))
    b, n = p_raw.shape
    order = np.argsort(p_raw, axis=1, kind="stable")
    p = np.take_along_axis(p_raw, order, axis=1)
    t = np.sort(t, axis=1, kind="stable")

    cross = p[:, :, None] - t[:, None, :]
    pp = p[:, :, None] - p[:, None, :]
    tt = t[:, :, None] - t[:, None, :]
    per_sample = (
        2.0 * np.abs(cross).mean(axis=(1, 2))
        - np.abs(tt).mean(axis=(1, 2))
        - np.abs(pp).mean(axis=(1, 2))
    )
    loss = float(per_sample.mean())

    grad_sorted = (2.0 / (n * n)) * (np.sign(cross).sum(axis=2) - np.sign(pp).sum(axis=2)) / b
    grad = np.empty_like(grad_sorted)
    np.put_along_axis(grad, order, grad_sorted, axis=1)
    single = np.asarray(pred_quantiles).ndim == 1
    return loss, (grad[0] if single else grad)
