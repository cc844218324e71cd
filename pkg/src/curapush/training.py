"""Rollout collection and the risk/uncertainty-augmented clipped-surrogate update.

One training iteration: run the current policy for T steps in each of N
parallel environments, estimate advantages with GAE, derive per-step risk and
uncertainty costs from the collision estimator's snapshot outputs, z-score
advantages and both cost channels over the batch, then sweep K epochs of
shuffled minibatches updating actor, critic, and collision estimator together.
With both cost weights zero the actor update is the plain clipped surrogate,
bitwise.

Everything downstream of the environments is deterministic given the seeds;
the collector consumes the action RNG in a fixed order (one batched normal
draw per step) so runs are reproducible and resumable.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dce as dce_mod
from .env import (
    EpisodeConfig,
    PushEnv,
    RewardConfig,
    observation_dim,
    observation_input_scale,
    rng_from_state_array,
    rng_state_array,
)
from .nets import AdamState, GaussianPolicy, Mlp, adam_step, load_arrays, save_arrays

LOG_COLUMNS = ("iteration", "mean_reward", "success_rate", "collision_rate",
               "mean_risk", "mean_uncertainty", "actor_loss", "critic_loss",
               "dce_loss", "entropy", "episodes_completed")


class TrainingDivergence(RuntimeError):
    """Raised when a loss or network output stops being finite."""


@dataclass
class CuraHyperparams:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.005
    epochs: int = 4
    minibatch_size: int = 256
    n_envs: int = 8
    horizon: int = 256
    lr: float = 3e-4
    lambda_risk: float = 0.25
    lambda_uncertainty: float = 1.0
    gamma_c: float = 0.9
    hidden: tuple = (128, 128)
    log_std_init: float = -0.9
    value_scale: float = 100.0
    actor_gain: float = 0.01
    actor_forward_bias: float = 0.0


@dataclass
class RolloutBatch:
    """Time-major (T, N, ...) transition arrays plus snapshot-network outputs."""

    obs: np.ndarray
    next_obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    collisions: np.ndarray
    terminals: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    risks: np.ndarray
    next_risks: np.ndarray
    uncertainties: np.ndarray
    next_uncertainties: np.ndarray
    dce_targets: np.ndarray

    @property
    def size(self) -> int:
        return self.rewards.size

    def flat(self, arr: np.ndarray) -> np.ndarray:
        return arr.reshape(self.size, *arr.shape[2:])


@dataclass
class EpisodeStats:
    """Completed-episode tallies accumulated during collection."""

    count: int = 0
    successes: int = 0
    collisions: int = 0
    total_return: float = 0.0
    total_length: int = 0

    def add(self, ep_return, length, success, collision):
        self.count += 1
        self.successes += int(success)
        self.collisions += int(collision)
        self.total_return += ep_return
        self.total_length += length

    @property
    def success_rate(self):
        return self.successes / self.count if self.count else 0.0

    @property
    def collision_rate(self):
        return self.collisions / self.count if self.count else 0.0


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise TrainingDivergence("non-finite values in %s" % name)


def collect_rollouts(policy, value_net, dce_net, envs, horizon, rng,
                     current_obs, gamma_c, ep_accum=None):
    """Run the policy snapshot for `horizon` steps per env.

    `current_obs` is the per-env list of live observation vectors (None where
    the env needs a reset); the updated list is returned so collection can
    continue seamlessly next iteration. Terminal transitions store the final
    observation of the finished episode in next_obs, then the env auto-resets.

    Value, risk, uncertainty, and Bellman targets are evaluated afterwards in
    one batched pass per network, under the same (still-unmodified) snapshot.
    """
    n = len(envs)
    obs_list = list(current_obs)
    for i, env in enumerate(envs):
        if obs_list[i] is None:
            obs_list[i] = env.reset().vector
    dim = obs_list[0].shape[0]

    obs = np.empty((horizon, n, dim))
    next_obs = np.empty((horizon, n, dim))
    actions = np.empty((horizon, n, 4))
    log_probs = np.empty((horizon, n))
    rewards = np.empty((horizon, n))
    collisions = np.empty((horizon, n))
    terminals = np.empty((horizon, n))

    if ep_accum is None:
        ep_accum = EpisodeStats()
    ep_return = np.zeros(n)
    ep_len = np.zeros(n, dtype=int)

    for t in range(horizon):
        ob = np.stack(obs_list)
        act, logp = policy.sample(ob, rng)
        _check_finite("policy sample", act)
        obs[t] = ob
        actions[t] = act
        log_probs[t] = logp
        for i, env in enumerate(envs):
            res = env.step(act[i])
            next_obs[t, i] = res.observation.vector
            rewards[t, i] = res.reward
            collisions[t, i] = float(res.collision)
            terminals[t, i] = float(res.terminal)
            ep_return[i] += res.reward
            ep_len[i] += 1
            if res.terminal:
                ep_accum.add(ep_return[i], ep_len[i], res.success, res.collision)
                ep_return[i] = 0.0
                ep_len[i] = 0
                obs_list[i] = env.reset().vector
            else:
                obs_list[i] = res.observation.vector

    flat_obs = obs.reshape(horizon * n, dim)
    flat_next = next_obs.reshape(horizon * n, dim)
    values = value_net.forward(flat_obs)[:, 0].reshape(horizon, n)
    next_values = value_net.forward(flat_next)[:, 0].reshape(horizon, n)
    q = dce_mod.predict_quantiles(dce_net, flat_obs)
    q_next = dce_mod.predict_quantiles(dce_net, flat_next)
    _check_finite("value/quantile outputs", np.concatenate([values.ravel(), q.ravel()]))
    risks, uncerts = dce_mod.risk_and_uncertainty(q)
    next_risks, next_uncerts = dce_mod.risk_and_uncertainty(q_next)
    targets = dce_mod.bellman_targets(collisions.reshape(-1), terminals.reshape(-1),
                                      q_next, gamma_c)

    batch = RolloutBatch(
        obs=obs, next_obs=next_obs, actions=actions, log_probs=log_probs,
        rewards=rewards, collisions=collisions, terminals=terminals,
        values=values, next_values=next_values,
        risks=risks.reshape(horizon, n), next_risks=next_risks.reshape(horizon, n),
        uncertainties=uncerts.reshape(horizon, n),
        next_uncertainties=next_uncerts.reshape(horizon, n),
        dce_targets=targets.reshape(horizon, n, -1),
    )
    return batch, obs_list, ep_accum


def gae_advantages(rewards, values, next_values, terminals, gamma, gae_lambda):
    """Generalized advantage estimation over a (T, N) batch.

    Terminal steps bootstrap zero (timeouts included); the recursion resets
    across episode boundaries. Returns (advantages, value_targets)."""
    rewards = np.asarray(rewards, float)
    t_steps = rewards.shape[0]
    adv = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[1])
    for t in range(t_steps - 1, -1, -1):
        live = 1.0 - terminals[t]
        delta = rewards[t] + gamma * next_values[t] * live - values[t]
        carry = delta + gamma * gae_lambda * live * carry
        adv[t] = carry
    return adv, adv + values


def risk_cost(collision, terminal, risk, next_risk, gamma_c):
    """One-step temporal-difference residual of expected collision exposure."""
    return collision + gamma_c * next_risk * (1.0 - terminal) - risk


def uncertainty_cost(uncertainty, next_uncertainty, terminal):
    """Step-to-step change in collision-forecast variance (terminals bootstrap 0)."""
    return next_uncertainty * (1.0 - terminal) - uncertainty


def normalize(x):
    """Batch z-score; a (near-)constant input maps to zeros."""
    x = np.asarray(x, float)
    std = x.std()
    if std < 1e-8:
        return np.zeros_like(x)
    return (x - x.mean()) / (std + 1e-8)


def clipped_surrogate(log_probs_new, log_probs_old, psi, clip_eps):
    """Pessimistic clipped objective shared by the plain and augmented paths.

    Returns (surrogate_value, dloss_dlogp) where surrogate_value is the mean of
    min(rho*psi, clip(rho)*psi) and dloss_dlogp is the gradient of its negation
    (the loss) with respect to the new log-probs. A clipped, non-improving
    sample contributes zero gradient.
    """
    ratio = np.exp(log_probs_new - log_probs_old)
    unclipped = ratio * psi
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * psi
    obj = np.minimum(unclipped, clipped)
    active = (unclipped <= clipped) | ((ratio > 1.0 - clip_eps) & (ratio < 1.0 + clip_eps))
    dloss_dlogp = -(psi * ratio * active) / psi.shape[0]
    return float(obj.mean()), dloss_dlogp


def actor_loss_and_grads(policy, obs, actions, logp_old, psi, clip_eps, entropy_coef):
    """Clipped-surrogate actor loss with entropy bonus and its parameter grads.

    This is the single actor path; the plain-surrogate baseline is this same
    function with psi equal to the normalized advantages. Returns
    (loss, mlp_grads, log_std_grad).
    """
    logp_new = policy.log_prob(obs, actions)
    surr, dlogp = clipped_surrogate(logp_new, logp_old, psi, clip_eps)
    _, mlp_grads, ls_grad = policy.log_prob_grads(obs, actions, dlogp,
                                                  dentropy=-entropy_coef)
    loss = -surr - entropy_coef * policy.entropy()
    return loss, mlp_grads, ls_grad


@dataclass
class UpdateStats:
    actor_loss: float = 0.0
    critic_loss: float = 0.0
    dce_loss: float = 0.0
    entropy: float = 0.0
    minibatches: int = 0


def cura_update(policy, value_net, dce_net, opt_actor, opt_critic, opt_dce,
                batch: RolloutBatch, hp: CuraHyperparams, rng) -> UpdateStats:
    """K epochs of shuffled minibatches over the flattened batch.

    The actor ascends the clipped surrogate on the augmented advantage
    psi = norm(A) - lambda_r*norm(C_R) - lambda_u*norm(C_U) plus an entropy
    bonus; the critic regresses value targets; the collision estimator
    minimizes the energy-distance loss to its precomputed Bellman targets.
    """
    obs = batch.flat(batch.obs)
    actions = batch.flat(batch.actions)
    logp_old = batch.flat(batch.log_probs)
    targets_dce = batch.flat(batch.dce_targets)

    adv, v_targets = gae_advantages(batch.rewards, batch.values, batch.next_values,
                                    batch.terminals, hp.gamma, hp.gae_lambda)
    adv = normalize(adv.reshape(-1))
    v_targets = v_targets.reshape(-1)
    c_risk = normalize(risk_cost(batch.collisions, batch.terminals, batch.risks,
                                 batch.next_risks, hp.gamma_c).reshape(-1))
    c_unc = normalize(uncertainty_cost(batch.uncertainties, batch.next_uncertainties,
                                       batch.terminals).reshape(-1))
    psi = adv - hp.lambda_risk * c_risk - hp.lambda_uncertainty * c_unc

    stats = UpdateStats()
    total = obs.shape[0]
    for _ in range(hp.epochs):
        perm = rng.permutation(total)
        for start in range(0, total, hp.minibatch_size):
            idx = perm[start:start + hp.minibatch_size]
            m = idx.shape[0]

            ent = policy.entropy()
            actor_loss, mlp_grads, ls_grad = actor_loss_and_grads(
                policy, obs[idx], actions[idx], logp_old[idx], psi[idx],
                hp.clip_eps, hp.entropy_coef)
            if not np.isfinite(actor_loss):
                raise TrainingDivergence("actor loss is not finite")
            adam_step(policy.params, mlp_grads + [ls_grad], opt_actor)

            v, cache = value_net.forward_cache(obs[idx])
            err = v[:, 0] - v_targets[idx]
            critic_loss = float(np.mean(err ** 2))
            grads, _ = value_net.backward(cache, (2.0 * err / m)[:, None])
            adam_step(value_net.params, grads, opt_critic)

            q, qcache = dce_net.forward_cache(obs[idx])
            dce_loss, dq = dce_mod.energy_distance_loss_grad(q, targets_dce[idx])
            grads, _ = dce_net.backward(qcache, dq)
            adam_step(dce_net.params, grads, opt_dce)

            stats.actor_loss += actor_loss
            stats.critic_loss += critic_loss
            stats.dce_loss += dce_loss
            stats.entropy += ent
            stats.minibatches += 1

    k = max(stats.minibatches, 1)
    stats.actor_loss /= k
    stats.critic_loss /= k
    stats.dce_loss /= k
    stats.entropy /= k
    return stats


# --- full training loop ---------------------------------------------------------


def build_networks(latent_dim, hp: CuraHyperparams, seed):
    """Actor, critic, and collision-estimator networks with shared input scaling."""
    obs_dim = observation_dim(latent_dim)
    scale = observation_input_scale(latent_dim)
    sizes = [obs_dim, *hp.hidden]
    policy = GaussianPolicy(Mlp(sizes + [4], seed=seed * 3 + 1, input_scale=scale,
                                final_gain=hp.actor_gain), log_std_init=hp.log_std_init)
    # Forward-drive prior: bias the base/pusher forward channels so initial
    # rollouts already make contact instead of random-walking in place.
    policy.mlp.biases[-1][0] = hp.actor_forward_bias
    policy.mlp.biases[-1][2] = hp.actor_forward_bias
    value_net = Mlp(sizes + [1], seed=seed * 3 + 2, input_scale=scale,
                    output_scale=hp.value_scale)
    dce_net = Mlp(sizes + [dce_mod.N_QUANTILES], seed=seed * 3 + 3, input_scale=scale,
                  final_gain=0.1)
    return policy, value_net, dce_net


class Trainer:
    """Owns environments, networks, optimizers, and RNGs for one training run.

    Checkpoints capture every piece of mutable state (parameters, Adam moments,
    RNG streams, environment snapshots), so a resumed run continues bitwise.
    """

    def __init__(self, cfg: EpisodeConfig, hp: CuraHyperparams, seed=0,
                 encoder=None, rcfg: RewardConfig | None = None):
        self.cfg = cfg
        self.hp = hp
        self.seed = int(seed)
        self.rcfg = rcfg or RewardConfig()
        self.envs = [PushEnv(cfg, instance_seed=self.seed * 100003 + i,
                             encoder=encoder, rcfg=self.rcfg)
                     for i in range(hp.n_envs)]
        latent_dim = self.envs[0].latent_dim
        self.policy, self.value_net, self.dce_net = build_networks(latent_dim, hp, self.seed)
        self.opt_actor = AdamState(self.policy.params, lr=hp.lr)
        self.opt_critic = AdamState(self.value_net.params, lr=hp.lr)
        self.opt_dce = AdamState(self.dce_net.params, lr=hp.lr)
        self.action_rng = np.random.default_rng((self.seed, 999983))
        self.update_rng = np.random.default_rng((self.seed, 777))
        self.iteration = 0
        self.current_obs = [None] * hp.n_envs

    def run_iteration(self):
        """One collect/estimate/update cycle; returns the log-row dict."""
        t0 = time.perf_counter()
        try:
            batch, self.current_obs, ep = collect_rollouts(
                self.policy, self.value_net, self.dce_net, self.envs,
                self.hp.horizon, self.action_rng, self.current_obs, self.hp.gamma_c)
            stats = cura_update(self.policy, self.value_net, self.dce_net,
                                self.opt_actor, self.opt_critic, self.opt_dce,
                                batch, self.hp, self.update_rng)
        except TrainingDivergence as exc:
            raise TrainingDivergence("iteration %d: %s" % (self.iteration, exc)) from exc
        self.iteration += 1
        return {
            "iteration": self.iteration,
            "mean_reward": float(batch.rewards.mean()),
            "success_rate": ep.success_rate,
            "collision_rate": ep.collision_rate,
            "mean_risk": float(batch.risks.mean()),
            "mean_uncertainty": float(batch.uncertainties.mean()),
            "actor_loss": stats.actor_loss,
            "critic_loss": stats.critic_loss,
            "dce_loss": stats.dce_loss,
            "entropy": stats.entropy,
            "episodes_completed": ep.count,
            "seconds": time.perf_counter() - t0,
        }

    # -- persistence -----------------------------------------------------------

    def save_checkpoint(self, directory):
        os.makedirs(directory, exist_ok=True)
        actor = self.policy.to_entries()
        actor.update(self.opt_actor.to_entries())
        save_arrays(os.path.join(directory, "actor.net"), actor)
        critic = self.value_net.to_entries()
        critic.update(self.opt_critic.to_entries())
        save_arrays(os.path.join(directory, "critic.net"), critic)
        dce = self.dce_net.to_entries()
        dce.update(self.opt_dce.to_entries())
        save_arrays(os.path.join(directory, "dce.net"), dce)

        env_arrays = {}
        for i, env in enumerate(self.envs):
            for k, v in env.state_dict().items():
                env_arrays["env%02d_%s" % (i, k)] = v
            env_arrays["env%02d_live" % i] = np.array(
                [1.0 if self.current_obs[i] is not None else 0.0])
        np.savez(os.path.join(directory, "envs.npz"), **env_arrays)

        manifest = {
            "iteration": self.iteration,
            "seed": self.seed,
            "n_envs": self.hp.n_envs,
            "action_rng": [int(x) for x in rng_state_array(self.action_rng)],
            "update_rng": [int(x) for x in rng_state_array(self.update_rng)],
            "hyperparams": asdict(self.hp),
        }
        manifest["hyperparams"]["hidden"] = list(self.hp.hidden)
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)

    def load_checkpoint(self, directory):
        actor = load_arrays(os.path.join(directory, "actor.net"))
        self.policy = GaussianPolicy.from_entries(actor)
        self.opt_actor = AdamState.from_entries(actor, self.policy.params)
        critic = load_arrays(os.path.join(directory, "critic.net"))
        self.value_net = Mlp.from_entries(critic)
        self.opt_critic = AdamState.from_entries(critic, self.value_net.params)
        dce = load_arrays(os.path.join(directory, "dce.net"))
        self.dce_net = Mlp.from_entries(dce)
        self.opt_dce = AdamState.from_entries(dce, self.dce_net.params)

        with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as f:
            manifest = json.load(f)
        self.iteration = manifest["iteration"]
        self.action_rng = rng_from_state_array(np.array(manifest["action_rng"], dtype=np.uint64))
        self.update_rng = rng_from_state_array(np.array(manifest["update_rng"], dtype=np.uint64))

        data = np.load(os.path.join(directory, "envs.npz"))
        for i, env in enumerate(self.envs):
            prefix = "env%02d_" % i
            env.load_state_dict({k[len(prefix):]: data[k] for k in data.files
                                 if k.startswith(prefix) and not k.endswith("_live")})
            live = data[prefix + "live"][0] > 0.5
            self.current_obs[i] = env._observation().vector if live else None


def format_log_row(row) -> str:
    vals = []
    for c in LOG_COLUMNS:
        v = row[c]
        vals.append(str(v) if isinstance(v, int) else "%.10g" % v)
    return ",".join(vals)


def train(cfg: EpisodeConfig, hp: CuraHyperparams, iterations, seed=0, encoder=None,
          log_path=None, checkpoint_dir=None, checkpoint_every=0, callback=None,
          rcfg=None) -> Trainer:
    """Train for `iterations` iterations, appending CSV rows to log_path.

    checkpoint_every=0 saves only the final checkpoint (when checkpoint_dir is
    given). The callback, if any, sees each log row and may return True to stop
    early.
    """
    trainer = Trainer(cfg, hp, seed=seed, encoder=encoder, rcfg=rcfg)
    log_f = None
    if log_path:
        log_f = open(log_path, "w", encoding="utf-8")
        log_f.write(",".join(LOG_COLUMNS) + "\n")
    try:
        for _ in range(iterations):
            row = trainer.run_iteration()
            if log_f:
                log_f.write(format_log_row(row) + "\n")
                log_f.flush()
            if checkpoint_dir and checkpoint_every and trainer.iteration % checkpoint_every == 0:
                trainer.save_checkpoint(os.path.join(checkpoint_dir, "iter_%06d" % trainer.iteration))
            if callback is not None and callback(row):
                break
    finally:
        if log_f:
            log_f.close()
    if checkpoint_dir:
        trainer.save_checkpoint(os.path.join(checkpoint_dir, "iter_%06d" % trainer.iteration))
    return trainer
