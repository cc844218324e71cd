"""Shared test utilities: finite differences and gradient comparison."""

import numpy as np


def fd_grads(f, params, h=1e-5):
    """Central finite differences of scalar f() over a list of arrays.

    f re-evaluates the loss from the (mutated) params; entries are perturbed in
    place and restored.
    """
    out = []
    for p in params:
        g = np.zeros_like(p, dtype=float)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_rel_err(analytic, numeric, floor=1e-6):
    """Worst relative error across paired gradient arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, float)
        n = np.asarray(n, float)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def ray_march_entry(origin, angle, rects, max_range):
    """Independent ray-distance oracle: Lipschitz marching plus bisection.

    The point-to-rect distance is 1-Lipschitz along the ray, so stepping by
    0.9 * distance (floored at 1e-7 near the surface) cannot jump over a
    boundary crossing wider than the floor. Once a step lands inside, the
    bracket is bisected to 1e-9. Returns max_range on a miss.
    """
    import math

    ox, oy = float(origin[0]), float(origin[1])
    dx, dy = math.cos(angle), math.sin(angle)
    frames = []
    for r in rects:
        c, s = math.cos(r.pose.yaw), math.sin(r.pose.yaw)
        frames.append((r.pose.x, r.pose.y, c, s, r.half_width, r.half_depth))

    def dist(t):
        px, py = ox + t * dx, oy + t * dy
        best = math.inf
        for (cx, cy, c, s, hw, hd) in frames:
            rx, ry = px - cx, py - cy
            lx = rx * c + ry * s
            ly = -rx * s + ry * c
            ddx = max(abs(lx) - hw, 0.0)
            ddy = max(abs(ly) - hd, 0.0)
            best = min(best, math.hypot(ddx, ddy))
        return best

    t = 0.0
    prev = 0.0
    while t <= max_range:
        v = dist(t)
        if v <= 0.0:
            if t == 0.0:
                return 0.0
            lo, hi = prev, t
            while hi - lo > 1e-9:
                mid = 0.5 * (lo + hi)
                if dist(mid) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = t
        t += max(0.9 * v, 1e-7)
    return max_range
