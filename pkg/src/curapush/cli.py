"""Command-line entry point.

Subcommands: pretrain-encoder, train, eval, dump, report. Every failure exits
nonzero with a single `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .env import EpisodeConfig, config_from_kv, read_kv_file
from .experiments import (
    VARIANTS,
    dump_trajectory,
    report_from_csvs,
    run_eval,
    run_pretrain_encoder,
    run_training,
    write_eval_csv,
)
from .training import CuraHyperparams


def _load_config(args) -> EpisodeConfig:
    if getattr(args, "config", None):
        cfg = config_from_kv(EpisodeConfig, read_kv_file(args.config))
    else:
        cfg = EpisodeConfig()
    if getattr(args, "scenario", None):
        cfg = replace(cfg, scenario=args.scenario)
    if getattr(args, "object_size", None):
        sizes = _float_list(args.object_size)
        if len(sizes) == 1:
            cfg = replace(cfg, object_size=sizes[0])
    return cfg


def _float_list(text) -> list:
    return [float(x) for x in str(text).split(",") if x]


def cmd_pretrain_encoder(args) -> int:
    cfg = replace(_load_config(args), latent_kind="pool")
    out = run_pretrain_encoder(cfg, episodes=args.episodes or 30, seed=args.seed,
                               out_path=args.out, epochs=args.epochs)
    print("pretrained encoder on %d windows, final loss %.6g, wrote %s"
          % (out["windows"], out["final_loss"], out["path"]))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    hp = CuraHyperparams()
    run_dir = run_training(args.variant, cfg, seed=args.seed, out_dir=args.out,
                           iterations=args.iterations, hp=hp,
                           checkpoint_every=args.checkpoint_every)
    print("training run complete: %s" % run_dir)
    return 0


def cmd_eval(args) -> int:
    scenarios = [s.strip().lower() for s in args.scenario.split(",") if s.strip()]
    sizes = _float_list(args.object_size)
    rows = run_eval(args.checkpoint, scenarios, sizes, episodes=args.episodes,
                    eval_seed=args.seed, jobs=args.jobs)
    out = args.out or os.path.join(args.checkpoint, "eval.csv")
    write_eval_csv(out, rows)
    for r in rows:
        print("%s %s size=%.2f success=%.3f collision=%.3f timeout=%.3f"
              % (r["variant"], r["scenario"], r["object_size"], r["success_rate"],
                 r["collision_rate"], r["timeout_rate"]))
    print("wrote %s" % out)
    return 0


def cmd_dump(args) -> int:
    info = dump_trajectory(args.checkpoint, seed=args.seed, out_dir=args.out)
    print("dumped %d steps (success=%s collision=%s) to %s"
          % (info["steps"], info["success"], info["collision"], info["out_dir"]))
    return 0


def cmd_report(args) -> int:
    if not args.inputs:
        raise ValueError("report needs at least one eval CSV")
    text = report_from_csvs(args.inputs, args.out, episodes_note=args.note)
    print(text, end="")
    print("wrote %s" % args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curapush",
                                description="Occlusion-aware pushing: train, evaluate, inspect.")
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("pretrain-encoder", help="train the map autoencoder on random-walk data")
    pe.add_argument("--config", help="episode config file (key=value lines)")
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--episodes", type=int, default=30, help="random episodes to collect")
    pe.add_argument("--epochs", type=int, default=20)
    pe.add_argument("--scenario", help="override config scenario")
    pe.add_argument("--object-size", help="override config object size")
    pe.add_argument("--out", required=True, help="output encoder file")
    pe.set_defaults(func=cmd_pretrain_encoder)

    tr = sub.add_parser("train", help="train one variant")
    tr.add_argument("--variant", required=True, choices=sorted(VARIANTS))
    tr.add_argument("--config", help="episode config file")
    tr.add_argument("--scenario", help="override config scenario")
    tr.add_argument("--object-size", help="override config object size")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--iterations", type=int, default=300)
    tr.add_argument("--checkpoint-every", type=int, default=0,
                    help="also checkpoint every N iterations (0: final only)")
    tr.add_argument("--out", required=True, help="run directory")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="paired-seed evaluation of a training run")
    ev.add_argument("--checkpoint", required=True, help="run directory from train")
    ev.add_argument("--scenario", default="uniform,adversarial",
                    help="comma-separated scenario list")
    ev.add_argument("--object-size", default="0.5,0.75,1.0",
                    help="comma-separated size list")
    ev.add_argument("--episodes", type=int, default=100, help="episodes per cell")
    ev.add_argument("--seed", type=int, default=0, help="evaluation seed base")
    ev.add_argument("--jobs", type=int, default=1, help="concurrent episodes")
    ev.add_argument("--out", help="output CSV (default: <checkpoint>/eval.csv)")
    ev.set_defaults(func=cmd_eval)

    du = sub.add_parser("dump", help="dump one deterministic episode as replayable files")
    du.add_argument("--checkpoint", required=True, help="run directory from train")
    du.add_argument("--seed", type=int, default=0, help="episode seed")
    du.add_argument("--out", required=True, help="output directory")
    du.set_defaults(func=cmd_dump)

    rp = sub.add_parser("report", help="aggregate eval CSVs into a success-rate grid")
    rp.add_argument("inputs", nargs="+", help="eval CSV files")
    rp.add_argument("--out", required=True, help="output report CSV")
    rp.add_argument("--note", default="", help="header note (protocol description)")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line, machine-parsable failure contract
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
