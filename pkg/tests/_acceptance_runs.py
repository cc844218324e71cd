"""Build and cache the trained runs the acceptance suite scores.

Training the full grid takes a few hours on one core, so every artifact
(training run, evaluation grid, slope array) is cached under runs/acceptance
and rebuilt only when missing. Wall-clock seconds are recorded per artifact
so the suite can assert the stated runtime budgets.

Pre-warm from a shell with:  python tests/_acceptance_runs.py
"""

import json
import os
import sys
import time

import numpy as np

from curapush import experiments as ex
from curapush.env import ADVERSARIAL, UNIFORM, EpisodeConfig
from curapush.training import CuraHyperparams

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
RUNS = os.path.join(ROOT, "runs", "acceptance")
WALL_FILE = os.path.join(RUNS, "wall_times.json")

# Policies are trained on the adversarial protocol (scheduled spawns on the
# push line, 0..6 obstacles per episode) and evaluated on both protocols.
TRAIN_CFG = EpisodeConfig(scenario=ADVERSARIAL, object_size=1.0)
SANITY_CFG = EpisodeConfig(obstacle_count=0)

G1 = ("push_no_occlusion", "push_with_occlusion", "cura_ppo")
G2 = ("baseline_conf", "cura_no_uncertainty", "cura_no_risk")
SEEDS = (0, 1, 2)
ITERATIONS = 300
EVAL_EPISODES = 300
EVAL_SEED = 0


def _load_wall():
    if os.path.exists(WALL_FILE):
        with open(WALL_FILE) as fh:
            return json.load(fh)
    return {}


def _record_wall(key, seconds):
    os.makedirs(RUNS, exist_ok=True)
    times = _load_wall()
    times[key] = round(float(seconds), 3)
    with open(WALL_FILE, "w") as fh:
        json.dump(times, fh, indent=1, sort_keys=True)


def wall_seconds(prefixes):
    """Sum of recorded wall seconds for artifact keys matching any prefix."""
    return sum(v for k, v in _load_wall().items()
               if any(k.startswith(p) for p in prefixes))


def _finished(run_dir):
    return os.path.exists(os.path.join(run_dir, "done.txt"))


def _train(name, variant, cfg, seed):
    run_dir = os.path.join(RUNS, name)
    if _finished(run_dir):
        return run_dir
    t0 = time.time()
    ex.run_training(variant, cfg, seed, run_dir, iterations=ITERATIONS,
                    hp=CuraHyperparams())
    dt = time.time() - t0
    _record_wall("train/" + name, dt)
    with open(os.path.join(run_dir, "done.txt"), "w") as fh:
        fh.write("%.3f\n" % dt)
    print("trained %s in %.0f s" % (name, dt), flush=True)
    return run_dir


def ensure_sanity():
    return _train("sanity_s0", "push_no_occlusion", SANITY_CFG, 0)


def ensure_run(variant, seed):
    return _train("%s_s%d" % (variant, seed), variant, TRAIN_CFG, seed)


def ensure_eval(variant, seed, scenario, episodes=EVAL_EPISODES):
    """One evaluation grid cell (cached row dict from run_eval)."""
    key = "eval/%s_s%d_%s" % (variant, seed, scenario)
    path = os.path.join(RUNS, "%s_s%d_eval_%s.json" % (variant, seed, scenario))
    if os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)
    run_dir = ensure_run(variant, seed)
    t0 = time.time()
    row = ex.run_eval(run_dir, [scenario], [1.0], episodes, eval_seed=EVAL_SEED)[0]
    _record_wall(key, time.time() - t0)
    with open(path, "w") as fh:
        json.dump(row, fh, indent=1, sort_keys=True)
    print("evaluated %s seed %d on %s: %.3f" %
          (variant, seed, scenario, row["success_rate"]), flush=True)
    return row


def ensure_sanity_eval(episodes=100):
    path = os.path.join(RUNS, "sanity_s0_eval.json")
    if os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)
    run_dir = ensure_sanity()
    t0 = time.time()
    row = ex.run_eval(run_dir, [UNIFORM], [1.0], episodes, eval_seed=500)[0]
    _record_wall("eval/sanity_s0", time.time() - t0)
    with open(path, "w") as fh:
        json.dump(row, fh, indent=1, sort_keys=True)
    print("sanity eval: %.3f" % row["success_rate"], flush=True)
    return row


def ensure_slopes(variant, seed, episodes=100):
    """Post-spawn uncertainty slopes on adversarial episodes (NaN-padded)."""
    path = os.path.join(RUNS, "%s_s%d_slopes.npz" % (variant, seed))
    if os.path.exists(path):
        return np.load(path)["slopes"]
    run_dir = ensure_run(variant, seed)
    t0 = time.time()
    slopes = ex.uncertainty_spawn_slopes(run_dir, episodes, eval_seed=EVAL_SEED)
    _record_wall("slopes/%s_s%d" % (variant, seed), time.time() - t0)
    np.savez(path, slopes=slopes)
    print("slopes %s seed %d: %d finite" %
          (variant, seed, int(np.isfinite(slopes).sum())), flush=True)
    return slopes


def success_rate(variant, scenario):
    """Mean success over the three seeds at object_size 1.0."""
    return float(np.mean([ensure_eval(variant, s, scenario)["success_rate"]
                          for s in SEEDS]))


def build_all():
    ensure_sanity()
    ensure_sanity_eval()
    for variant in G1 + G2:
        for seed in SEEDS:
            ensure_run(variant, seed)
    for variant in G1 + G2:
        for seed in SEEDS:
            ensure_eval(variant, seed, ADVERSARIAL)
            ensure_eval(variant, seed, UNIFORM)
    ensure_slopes("cura_ppo", 0)
    ensure_slopes("push_with_occlusion", 0)
    total = wall_seconds(("train/", "eval/", "slopes/"))
    print("cache complete, %.1f h recorded" % (total / 3600.0), flush=True)


if __name__ == "__main__":
    sys.exit(build_all())
