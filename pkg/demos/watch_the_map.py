"""Watch the confidence map decay behind the pushed object.

Drives the robot straight ahead for a while and prints the confidence map
as ASCII art every 20 steps. With realistic sensing the manipulated object
blots out everything in front of the push, so cells in its shadow fade by
alpha=0.9 per step; switch occlusion off and the same scene stays crisp.

Legend: '#' hit (confident), '+' free (confident), '.' free (stale),
        ' ' unknown. The 'O' marks the object, 'R' the robot base.
"""

import numpy as np

from curapush.env import EpisodeConfig, PushEnv


def ascii_map(env, width=72, height=24):
    cmap = env.cmap
    sig = cmap.signed()
    nx, ny = sig.shape
    rows = []
    for row in range(height):
        iy = int((height - 1 - row) * ny / height)
        line = []
        for col in range(width):
            ix = int(col * nx / width)
            v = sig[ix, iy]
            if v <= -0.5:
                ch = "#"
            elif v >= 0.5:
                ch = "+"
            elif v > 0.05:
                ch = "."
            else:
                ch = " "
            line.append(ch)
        rows.append(line)

    def put(point, ch):
        ix, iy = cmap.world_to_cell(point)
        col = int(ix * width / nx)
        row = height - 1 - int(iy * height / ny)
        if 0 <= row < height and 0 <= col < width:
            rows[row][col] = ch

    put(env.state.object.center, "O")
    put(env.state.base.position, "R")
    return "\n".join("".join(r) for r in rows)


def main():
    cfg = EpisodeConfig(obstacle_count=4, scenario="adversarial")
    env = PushEnv(cfg, instance_seed=0)
    env.reset(seed=42)
    forward = np.array([0.6, 0.0, 0.6, 0.0])

    for step in range(81):
        res = env.step(forward)
        if step % 20 == 0:
            stale = float(np.mean((env.cmap.values > 0.0)
                                  & (env.cmap.values < 0.5)))
            print("t = %4.1f s   stale cell fraction %.3f" %
                  (env.state.sim_time, stale))
            print(ascii_map(env))
            print()
        if res.terminal:
            print("episode ended early (%s)" %
                  ("collision" if res.collision else "timeout"))
            break


if __name__ == "__main__":
    main()
