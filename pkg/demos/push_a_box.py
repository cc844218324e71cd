"""Push a box to the goal with a hand-written controller.

No learning here: this script drives the simulator directly to show how the
quasi-static contact model behaves. The rules it exploits:

  - pressing a face along its inward normal translates the object, never
    rotates it;
  - sliding the pusher tangentially along a face rotates the object, with
    the sign set by the slide direction alone;
  - the object only moves while pushed, so you can stage the approach.

The controller pushes the object to a waypoint 3 m short of the goal, turns
it in place until its yaw matches the goal yaw, then creeps the final leg.

Run:  python demos/push_a_box.py [seed]
"""

import math
import sys

import numpy as np

from curapush.env import EpisodeConfig, PushEnv
from curapush.geometry import rot2


def wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def back_face(rect, u):
    """Inward local normal, tangent, and half-extent of the face to press
    so the object translates along u."""
    rot = rot2(rect.pose.yaw)
    best = None
    for axis in range(2):
        for sign in (1.0, -1.0):
            n = np.zeros(2)
            n[axis] = sign
            score = (rot @ n) @ u
            if best is None or score > best[0]:
                half = rect.half_width if axis == 0 else rect.half_depth
                best = (score, n, half)
    _, n, half = best
    return n, np.array([-n[1], n[0]]), half


def crosses_object(p0, p1, rect, margin=0.05):
    for f in np.linspace(0.0, 1.0, 9):
        local = rect.to_local(p0 + f * (p1 - p0))
        if (abs(local[0]) <= rect.half_width + margin
                and abs(local[1]) <= rect.half_depth + margin):
            return True
    return False


def control(state, waypoint):
    rect = state.object
    obj = rect.center
    to_wp = waypoint - obj
    dist = float(np.linalg.norm(to_wp))
    u = to_wp / max(dist, 1e-9)
    rot = rot2(rect.pose.yaw)
    n, t, half = back_face(rect, u)

    push_dir = rot @ n
    yaw_err = wrap(math.atan2(u[1], u[0]) - math.atan2(push_dir[1], push_dir[0]))
    local = rect.to_local(state.pusher)
    p_t = float(local @ t)
    on_face = abs(float(local @ n) + half) < 0.12 and abs(p_t) < half * 0.9

    if not on_face:
        target = obj + rot @ (-n * (half + 0.10))
        if crosses_object(state.pusher, target, rect):
            away = state.pusher - obj
            away /= max(np.linalg.norm(away), 1e-9)
            target = obj + away * (rect.half_diagonal + 0.45)
        pusher_v = (target - state.pusher) * 5.0
    else:
        # Spend speed on the tangential slide first; rotation authority is
        # what the endgame needs, translation uses whatever is left.
        delta = float(np.clip(yaw_err, -0.09, 0.09))
        v_t = float(np.clip(-delta * rect.half_diagonal / half / 0.2, -0.7, 0.7))
        if abs(p_t) > half * 0.55 and np.sign(v_t) == np.sign(p_t):
            v_t = 0.0  # would slide off the face edge; recenter next pass
        v_n = math.sqrt(max(0.8 ** 2 - v_t ** 2, 0.02))
        slow = 1.0 if dist > 0.35 else max(0.2, dist / 0.35)
        pusher_v = (rot @ (n * v_n + t * v_t)) * slow

    base_target = obj + rot @ (-n * (half + 0.95))
    base_v = (base_target - state.base.position) * 6.0
    to_base = rot2(state.base.yaw).T
    return np.concatenate([to_base @ base_v, to_base @ pusher_v])


def run(seed):
    env = PushEnv(EpisodeConfig(obstacle_count=0), instance_seed=0)
    env.reset(seed=seed)
    goal = np.array([env.state.goal.x, env.state.goal.y])
    gyaw = env.state.goal.yaw
    heading = np.array([math.cos(gyaw), math.sin(gyaw)])

    phase = "transit"
    while True:
        obj = env.state.object.center
        pre = goal - 3.0 * heading
        far = np.linalg.norm(goal - obj) > 3.2 and np.linalg.norm(pre - obj) > 0.3
        if phase == "transit" and not far:
            phase = "final"
            print("  step %3d: waypoint reached, turning onto the goal line"
                  % int(round(env.state.sim_time / env.cfg.dt)))
        res = env.step(control(env.state, pre if far else goal))
        if res.terminal:
            return res


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
    print("seed %d" % seed)
    res = run(seed)
    print("  result: %s, mean corner distance %.3f m, %.1f s simulated"
          % ("success" if res.success else "failure",
             res.info["keypoint_distance"], res.info["sim_time"]))


if __name__ == "__main__":
    main()
