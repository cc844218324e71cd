"""Train for a few iterations at half world scale, then replay a dump.

A miniature end-to-end pass over the whole toolkit: pretrained-free encoder,
a short training run, a deterministic trajectory dump, and the bit-level
replay check. Finishes in about a minute on one core; nothing here is meant
to produce a good policy.
"""

import tempfile

from curapush import experiments as ex
from curapush.env import EpisodeConfig
from curapush.training import CuraHyperparams


def main():
    cfg = EpisodeConfig(world_scale=0.5, obstacle_count=2, beam_count=90)
    hp = CuraHyperparams(n_envs=2, horizon=64, minibatch_size=64,
                         epochs=2, hidden=(64, 64))

    with tempfile.TemporaryDirectory() as tmp:
        run_dir = tmp + "/run"
        print("training cura_ppo for 5 iterations at world_scale 0.5")
        ex.run_training("cura_ppo", cfg, seed=0, out_dir=run_dir,
                        iterations=5, hp=hp)
        with open(run_dir + "/train_log.csv") as fh:
            for line in fh:
                print("  " + line.rstrip())

        dump_dir = tmp + "/dump"
        ex.dump_trajectory(run_dir, seed=7, out_dir=dump_dir)
        dev = ex.replay_trace(dump_dir)
        print("replayed the dumped episode, max deviation %.2e" % dev)


if __name__ == "__main__":
    main()
