"""Experiment runner: variant table, training runs, paired evaluation, dumps.

A run directory is self-describing: resolved config (with variant, seed, and
hyperparameters folded in as extra keys), the frozen encoder, per-checkpoint
network files, and the training CSV. Evaluation derives each episode seed from
(eval seed, scenario, size, index) only, so every variant evaluated with the
same arguments faces byte-identical episode setups.
"""

from __future__ import annotations

import concurrent.futures
import glob
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .dce import predict_quantiles, risk_and_uncertainty
from .env import (
    ADVERSARIAL,
    UNIFORM,
    EpisodeConfig,
    PushEnv,
    config_from_kv,
    config_to_kv,
    read_kv_file,
    write_kv_file,
)
from .geometry import Action, WorldState, step_kinematics
from .nets import GaussianPolicy, Mlp, load_arrays, save_arrays
from .perception import (
    OBJECT_FILTERED,
    REALISTIC,
    PoolEncoder,
    encoder_from_entries,
    encoder_to_entries,
    local_window,
    pretrain_encoder,
    write_pgm,
)
from .training import CuraHyperparams, Trainer, train


@dataclass(frozen=True)
class VariantSpec:
    """Flags distinguishing the eight comparison rows."""

    name: str
    group: str
    occlusion_mode: str
    use_latent: bool
    lambda_risk: float
    lambda_uncertainty: float
    base_only: bool


VARIANTS = {v.name: v for v in [
    VariantSpec("push_no_occlusion", "G1", OBJECT_FILTERED, True, 0.0, 0.0, False),
    VariantSpec("push_with_occlusion", "G1", REALISTIC, False, 0.0, 0.0, False),
    VariantSpec("cura_ppo", "G1", REALISTIC, True, 0.25, 1.0, False),
    VariantSpec("baseline_conf", "G2", REALISTIC, True, 0.0, 0.0, False),
    VariantSpec("cura_no_uncertainty", "G2", REALISTIC, True, 0.25, 0.0, False),
    VariantSpec("cura_no_risk", "G2", REALISTIC, True, 0.0, 1.0, False),
    VariantSpec("push_base", "G3", REALISTIC, False, 0.0, 0.0, True),
    VariantSpec("cura_base", "G3", REALISTIC, True, 0.25, 1.0, True),
]}


def apply_variant(cfg: EpisodeConfig, spec: VariantSpec) -> EpisodeConfig:
    return replace(cfg, occlusion_mode=spec.occlusion_mode,
                   use_latent=spec.use_latent, base_only=spec.base_only)


def variant_hyperparams(hp: CuraHyperparams, spec: VariantSpec) -> CuraHyperparams:
    return replace(hp, lambda_risk=spec.lambda_risk,
                   lambda_uncertainty=spec.lambda_uncertainty)


def make_encoder(cfg: EpisodeConfig):
    if cfg.latent_kind == "pool":
        return PoolEncoder()
    if cfg.latent_kind == "vae":
        if not cfg.encoder_path:
            raise ValueError("latent_kind=vae requires encoder_path")
        return encoder_from_entries(load_arrays(cfg.encoder_path))
    raise ValueError("unknown latent_kind %r" % cfg.latent_kind)


# --- training runs ----------------------------------------------------------------


def run_training(variant: str, cfg: EpisodeConfig, seed: int, out_dir: str,
                 iterations: int = 300, hp: CuraHyperparams | None = None,
                 checkpoint_every: int = 0, callback=None) -> str:
    """Train one variant and leave a self-describing run directory."""
    if variant not in VARIANTS:
        raise ValueError("unknown variant %r (expected one of %s)"
                         % (variant, ", ".join(sorted(VARIANTS))))
    spec = VARIANTS[variant]
    cfg = apply_variant(cfg, spec)
    hp = variant_hyperparams(hp or CuraHyperparams(), spec)
    os.makedirs(out_dir, exist_ok=True)

    encoder = make_encoder(cfg)
    save_arrays(os.path.join(out_dir, "encoder.net"), encoder_to_entries(encoder))

    kv = config_to_kv(cfg)
    kv["variant"] = variant
    kv["seed"] = str(seed)
    kv["iterations"] = str(iterations)
    kv["code_version"] = __version__
    for k, v in config_to_kv(hp).items():
        kv["hp_" + k] = v
    write_kv_file(os.path.join(out_dir, "config.txt"), kv)

    train(cfg, hp, iterations, seed=seed, encoder=encoder,
          log_path=os.path.join(out_dir, "train_log.csv"),
          checkpoint_dir=os.path.join(out_dir, "checkpoints"),
          checkpoint_every=checkpoint_every, callback=callback)
    return out_dir


def latest_checkpoint(run_dir: str) -> str:
    dirs = sorted(glob.glob(os.path.join(run_dir, "checkpoints", "iter_*")))
    if not dirs:
        raise FileNotFoundError("no checkpoints under %s" % run_dir)
    return dirs[-1]


@dataclass
class RunBundle:
    """Everything needed to evaluate a finished (or loaded) training run."""

    cfg: EpisodeConfig
    hp: CuraHyperparams
    variant: str
    seed: int
    policy: GaussianPolicy
    value_net: Mlp
    dce_net: Mlp
    encoder: object


def load_run(run_dir: str, checkpoint: str | None = None) -> RunBundle:
    kv = read_kv_file(os.path.join(run_dir, "config.txt"))
    cfg = config_from_kv(EpisodeConfig, kv)
    hp = config_from_kv(CuraHyperparams, {k[3:]: v for k, v in kv.items()
                                          if k.startswith("hp_")})
    ckpt = checkpoint or latest_checkpoint(run_dir)
    policy = GaussianPolicy.from_entries(load_arrays(os.path.join(ckpt, "actor.net")))
    value_net = Mlp.from_entries(load_arrays(os.path.join(ckpt, "critic.net")))
    dce_net = Mlp.from_entries(load_arrays(os.path.join(ckpt, "dce.net")))
    encoder = encoder_from_entries(load_arrays(os.path.join(run_dir, "encoder.net")))
    obs_dim = policy.mlp.layer_sizes[0]
    if obs_dim != 19 + encoder.latent_dim:
        raise ValueError("checkpoint/config mismatch: policy expects %d-dim "
                         "observations, encoder gives %d" % (obs_dim, 19 + encoder.latent_dim))
    return RunBundle(cfg=cfg, hp=hp, variant=kv.get("variant", ""),
                     seed=int(kv.get("seed", "0")), policy=policy,
                     value_net=value_net, dce_net=dce_net, encoder=encoder)


# --- episode rollouts ---------------------------------------------------------------


def episode_seed(eval_seed: int, scenario: str, object_size: float, index: int) -> int:
    """Stable per-episode seed; variant-independent so evaluations pair up."""
    scen_id = 1 if scenario == ADVERSARIAL else 0
    ss = np.random.SeedSequence((int(eval_seed), scen_id, round(object_size * 1000), int(index)))
    return int(ss.generate_state(1, np.uint64)[0] >> 2)


@dataclass
class EpisodeRecord:
    seed: int
    schedule_hash: str
    steps: int
    success: bool
    collision: bool
    timeout: bool
    total_reward: float
    uncertainties: np.ndarray
    spawn_steps: list
    final_keypoint_distance: float
    actions: list


def rollout_episode(cfg: EpisodeConfig, bundle: RunBundle, seed: int,
                    step_hook=None) -> EpisodeRecord:
    """Deterministic (mean-action) episode under a trained bundle."""
    env = PushEnv(cfg, instance_seed=seed, encoder=bundle.encoder)
    obs = env.reset(seed=seed)
    max_steps = int(math.ceil(cfg.timeout / cfg.dt)) + 2
    uncerts = []
    spawn_steps = []
    actions = []
    total = 0.0
    steps = 0
    success = collision = False
    if step_hook is not None:
        step_hook(env, None, obs, steps)
    schedule_hash = env.schedule.hash()
    for steps in range(1, max_steps + 1):
        action = bundle.policy.mean(obs.vector)
        actions.append(action)
        res = env.step(action)
        obs = res.observation
        total += res.reward
        q = predict_quantiles(bundle.dce_net, obs.vector)
        _, u = risk_and_uncertainty(q)
        uncerts.append(float(u))
        if any(e["event"] == "spawn" for e in res.info["spawn_events"]):
            spawn_steps.append(steps)
        if step_hook is not None:
            step_hook(env, res, obs, steps)
        if res.terminal:
            success, collision = res.success, res.collision
            break
    return EpisodeRecord(seed=seed, schedule_hash=schedule_hash, steps=steps,
                         success=success, collision=collision,
                         timeout=not (success or collision), total_reward=total,
                         uncertainties=np.array(uncerts), spawn_steps=spawn_steps,
                         final_keypoint_distance=res.info["keypoint_distance"],
                         actions=actions)


# --- evaluation ---------------------------------------------------------------------

EVAL_COLUMNS = ("variant", "scenario", "object_size", "episodes", "success_rate",
                "collision_rate", "timeout_rate", "mean_episode_length",
                "mean_final_uncertainty", "seeds")


def run_eval(run_dir: str, scenarios, object_sizes, episodes: int, eval_seed: int = 0,
             jobs: int = 1, checkpoint: str | None = None):
    """Evaluate one run over the scenario x size grid; returns row dicts."""
    bundle = load_run(run_dir, checkpoint)
    rows = []
    for scenario in scenarios:
        for size in object_sizes:
            cfg = replace(bundle.cfg, scenario=scenario, object_size=float(size))
            seeds = [episode_seed(eval_seed, scenario, size, j) for j in range(episodes)]
            if jobs > 1:
                with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as ex:
                    records = list(ex.map(lambda s: rollout_episode(cfg, bundle, s), seeds))
            else:
                records = [rollout_episode(cfg, bundle, s) for s in seeds]
            rows.append({
                "variant": bundle.variant,
                "scenario": scenario,
                "object_size": float(size),
                "episodes": episodes,
                "success_rate": float(np.mean([r.success for r in records])),
                "collision_rate": float(np.mean([r.collision for r in records])),
                "timeout_rate": float(np.mean([r.timeout for r in records])),
                "mean_episode_length": float(np.mean([r.steps for r in records])),
                "mean_final_uncertainty": float(np.mean([r.uncertainties[-1] for r in records])),
                "seeds": "%d+%d" % (eval_seed, episodes),
            })
    return rows


def write_eval_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(EVAL_COLUMNS) + "\n")
        for r in rows:
            f.write(",".join(_fmt_cell(r[c]) for c in EVAL_COLUMNS) + "\n")


def read_eval_csv(path: str):
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        rows = []
        for line in f:
            if not line.strip():
                continue
            vals = line.strip().split(",")
            row = dict(zip(header, vals))
            for k in ("object_size", "success_rate", "collision_rate", "timeout_rate",
                      "mean_episode_length", "mean_final_uncertainty"):
                row[k] = float(row[k])
            row["episodes"] = int(row["episodes"])
            rows.append(row)
    return rows


def _fmt_cell(v):
    if isinstance(v, float):
        return "%.10g" % v
    return str(v)


def uncertainty_spawn_slopes(run_dir: str, episodes: int, eval_seed: int = 0,
                             object_size: float = 1.0, window: int = 10,
                             checkpoint: str | None = None) -> np.ndarray:
    """Per-episode slope of estimator variance over `window` steps after the
    first obstacle spawn, on adversarial episodes. NaN where the episode has no
    spawn or ends too soon; indices align across runs via the shared seeds."""
    bundle = load_run(run_dir, checkpoint)
    cfg = replace(bundle.cfg, scenario=ADVERSARIAL, object_size=object_size)
    slopes = np.full(episodes, np.nan)
    for j in range(episodes):
        rec = rollout_episode(cfg, bundle, episode_seed(eval_seed, ADVERSARIAL, object_size, j))
        if not rec.spawn_steps:
            continue
        s = rec.spawn_steps[0] - 1          # uncertainties[k] belongs to step k+1
        seg = rec.uncertainties[s:s + window]
        if seg.shape[0] < window:
            continue
        slopes[j] = np.polyfit(np.arange(window), seg, 1)[0]
    return slopes


# --- trajectory dumps ----------------------------------------------------------------


def dump_trajectory(run_dir: str, seed: int, out_dir: str,
                    checkpoint: str | None = None) -> dict:
    """Write one deterministic episode as replayable text + map images.

    trace.txt / trace_full.txt: one world-state line per step (the full file at
    17 significant digits for exact replay), reward components appended from
    step 1 on. actions.txt: raw policy outputs. quantiles.csv: the 50 estimator
    quantiles per step. maps/: one confidence-map PGM per step.
    """
    bundle = load_run(run_dir, checkpoint)
    cfg = bundle.cfg
    os.makedirs(out_dir, exist_ok=True)
    maps_dir = os.path.join(out_dir, "maps")
    os.makedirs(maps_dir, exist_ok=True)

    trace, trace_full, qlines = [], [], []

    def hook(env, res, obs, step):
        comps = "" if res is None else " " + " ".join(
            "%.6f" % c for c in res.reward_components)
        comps_full = "" if res is None else " " + " ".join(
            "%.17g" % c for c in res.reward_components)
        trace.append(env.state.to_trace_line(decimals=6) + comps)
        trace_full.append(env.state.to_trace_line(decimals=17) + comps_full)
        q = predict_quantiles(bundle.dce_net, obs.vector)
        qlines.append(",".join("%.10g" % x for x in q))
        win = local_window(env.cmap, env.state.base.position)
        write_pgm(os.path.join(maps_dir, "step_%04d.pgm" % step), (win + 1.0) / 2.0)

    record = rollout_episode(cfg, bundle, seed, step_hook=hook)
    actions_lines = [" ".join("%.17g" % x for x in a) for a in record.actions]

    _write_lines(os.path.join(out_dir, "trace.txt"), trace)
    _write_lines(os.path.join(out_dir, "trace_full.txt"), trace_full)
    _write_lines(os.path.join(out_dir, "actions.txt"), actions_lines)
    with open(os.path.join(out_dir, "quantiles.csv"), "w", encoding="utf-8") as f:
        f.write(",".join("q%02d" % (i + 1) for i in range(50)) + "\n")
        f.write("\n".join(qlines) + "\n")
    kv = config_to_kv(cfg)
    kv["episode_seed"] = str(seed)
    kv["code_version"] = __version__
    write_kv_file(os.path.join(out_dir, "config.txt"), kv)
    return {"steps": record.steps, "success": record.success,
            "collision": record.collision, "out_dir": out_dir}


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def replay_trace(dump_dir: str) -> float:
    """Re-integrate a dumped episode from its recorded actions and compare
    against the recorded states. Returns the maximum absolute deviation over
    every numeric state field. Obstacle insertions are taken from the trace
    (they come from the spawn schedule, not the kinematics)."""
    cfg = config_from_kv(EpisodeConfig, read_kv_file(os.path.join(dump_dir, "config.txt")))
    with open(os.path.join(dump_dir, "trace_full.txt"), "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    with open(os.path.join(dump_dir, "actions.txt"), "r", encoding="utf-8") as f:
        actions = [np.array([float(x) for x in ln.split()]) for ln in f if ln.strip()]
    state = WorldState.from_trace_line(lines[0])
    worst = 0.0
    for k, raw in enumerate(actions):
        cmd = Action.clamped(raw, cfg.v_max, cfg.pusher_v_max)
        state = step_kinematics(state, cmd, cfg.dt, v_max=cfg.v_max,
                                pusher_v_max=cfg.pusher_v_max,
                                reach_radius=cfg.reach_radius,
                                base_only=cfg.base_only, pin_offset=cfg.base_radius)
        recorded = WorldState.from_trace_line(lines[k + 1])
        state.obstacles = [o for o in recorded.obstacles]
        worst = max(worst, _state_deviation(state, recorded))
    return worst


def _state_deviation(a: WorldState, b: WorldState) -> float:
    va = _state_vector(a)
    vb = _state_vector(b)
    if va.shape != vb.shape:
        return math.inf
    return float(np.max(np.abs(va - vb)))


def _state_vector(s: WorldState) -> np.ndarray:
    parts = [s.sim_time, s.base.x, s.base.y, s.base.yaw, s.pusher[0], s.pusher[1],
             s.object.pose.x, s.object.pose.y, s.object.pose.yaw,
             s.goal.x, s.goal.y, s.goal.yaw]
    for o in s.obstacles:
        parts.extend([o.pose.x, o.pose.y, o.pose.yaw])
    return np.array(parts)


# --- encoder pretraining ---------------------------------------------------------------


def collect_windows(cfg: EpisodeConfig, episodes: int, seed: int = 0,
                    steps_per_episode: int = 60) -> np.ndarray:
    """Gather local confidence windows from random-action episodes."""
    rng = np.random.default_rng((seed, 0xFACE))
    windows = []
    for e in range(episodes):
        env = PushEnv(cfg, instance_seed=seed * 131 + e)
        env.reset(seed=episode_seed(seed, cfg.scenario, cfg.object_size, e))
        for _ in range(steps_per_episode):
            res = env.step(rng.uniform(-1.0, 1.0, 4))
            windows.append(local_window(env.cmap, env.state.base.position))
            if res.terminal:
                break
    return np.stack(windows)


def run_pretrain_encoder(cfg: EpisodeConfig, episodes: int, seed: int,
                         out_path: str, epochs: int = 20) -> dict:
    windows = collect_windows(cfg, episodes, seed=seed)
    encoder, losses = pretrain_encoder(windows, epochs=epochs, seed=seed)
    save_arrays(out_path, encoder_to_entries(encoder))
    return {"windows": int(windows.shape[0]), "final_loss": float(losses[-1]),
            "path": out_path}


# --- report ------------------------------------------------------------------------


_GROUP_ORDER = ("G1", "G2", "G3")


def build_report(eval_rows, episodes_note: str = "") -> str:
    """Success-rate grid: variant rows grouped, scenario x size columns."""
    sizes = sorted({r["object_size"] for r in eval_rows})
    scenarios = [s for s in (UNIFORM, ADVERSARIAL)
                 if any(r["scenario"] == s for r in eval_rows)]
    cell = {}
    for r in eval_rows:
        key = (r["variant"], r["scenario"], r["object_size"])
        cur = cell.setdefault(key, [])
        cur.append(r["success_rate"])

    lines = []
    header = ["variant"]
    for sc in scenarios:
        for sz in sizes:
            header.append("%s_%.2f" % (sc, sz))
    lines.append(",".join(header))
    ordered = sorted({r["variant"] for r in eval_rows},
                     key=lambda v: (_GROUP_ORDER.index(VARIANTS[v].group)
                                    if v in VARIANTS else 9, v))
    for v in ordered:
        row = [v]
        for sc in scenarios:
            for sz in sizes:
                vals = cell.get((v, sc, sz))
                row.append("%.1f" % (100.0 * np.mean(vals)) if vals else "")
        lines.append(",".join(row))
    note = episodes_note or "desk-scale protocol; success rates in percent"
    return "# " + note + "\n" + "\n".join(lines) + "\n"


def report_from_csvs(paths, out_path: str, episodes_note: str = "") -> str:
    rows = []
    for p in paths:
        rows.extend(read_eval_csv(p))
    text = build_report(rows, episodes_note)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(text)
    return text
