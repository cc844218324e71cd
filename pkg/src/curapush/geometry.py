"""Planar rigid-body primitives for the pushing world.

Everything is 2D and metric (meters, seconds, radians). The world is a set of
oriented rectangles (one manipulated object, zero or more obstacles), a
holonomic base, and a point pusher tethered to the base. Dynamics are
quasi-static: bodies only move when pushed, integration is explicit Euler at a
fixed control step, and the pusher uses swept-segment contact so a fast pusher
cannot tunnel through a thin body.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]. Exact identity on already-wrapped values,
    so re-parsing a serialized pose cannot perturb it."""
    if -math.pi < a <= math.pi:
        return a
    return math.pi - (math.pi - a) % TWO_PI


def rot2(yaw: float) -> np.ndarray:
    """2x2 rotation matrix for a yaw angle."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


@dataclass
class Pose2D:
    """Planar pose. yaw is stored normalized to (-pi, pi]."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        self.yaw = normalize_angle(self.yaw)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class OrientedRect:
    """Axis box of half extents (half_width along local x, half_depth along
    local y) posed in the world.

    Corner order is canonical: counterclockwise starting from the local
    (+half_width, +half_depth) corner. Keypoint correspondences elsewhere rely
    on this order being stable.
    """

    pose: Pose2D
    half_width: float
    half_depth: float

    _LOCAL_CORNER_SIGNS = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])

    @property
    def center(self) -> np.ndarray:
        return self.pose.position

    @property
    def half_diagonal(self) -> float:
        return math.hypot(self.half_width, self.half_depth)

    def corners(self) -> np.ndarray:
        """World coordinates of the 4 corners, shape (4, 2), canonical order."""
        local = self._LOCAL_CORNER_SIGNS * np.array([self.half_width, self.half_depth])
        return local @ rot2(self.pose.yaw).T + self.center

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 2) into the rect's local frame."""
        return (np.asarray(points) - self.center) @ rot2(self.pose.yaw)

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        """True if the world point is inside or on the boundary (inflated by margin)."""
        lx, ly = self.to_local(np.asarray(point, dtype=float))
        return abs(lx) <= self.half_width + margin and abs(ly) <= self.half_depth + margin

    def distance_to_point(self, point: np.ndarray) -> float:
        """Euclidean distance from a world point to the rect (0 inside)."""
        local = self.to_local(np.asarray(point, dtype=float))
        dx = max(abs(local[0]) - self.half_width, 0.0)
        dy = max(abs(local[1]) - self.half_depth, 0.0)
        return math.hypot(dx, dy)


@dataclass
class Action:
    """Velocity command, both parts expressed in the base frame.

    base_velocity and pusher_velocity are (vx, vy) in m/s and are norm-clamped
    at construction time via `clamped`, so a stored Action always satisfies the
    speed limits it was built with.
    """

    base_velocity: np.ndarray
    pusher_velocity: np.ndarray

    @staticmethod
    def clamped(raw: np.ndarray, v_max: float, pusher_v_max: float) -> "Action":
        """Build an Action from a raw 4-vector [base vx, vy, pusher vx, vy]."""
        raw = np.asarray(raw, dtype=float).reshape(4)
        return Action(
            base_velocity=_clamp_norm(raw[:2], v_max),
            pusher_velocity=_clamp_norm(raw[2:], pusher_v_max),
        )

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.base_velocity, self.pusher_velocity])


def _clamp_norm(v: np.ndarray, limit: float) -> np.ndarray:
    v = np.asarray(v, dtype=float).copy()
    n = float(np.linalg.norm(v))
    if n > limit and n > 0.0:
        v *= limit / n
    return v


@dataclass
class WorldState:
    """Full simulator state: poses only, velocities are finite differences upstream."""

    sim_time: float
    base: Pose2D
    pusher: np.ndarray
    object: OrientedRect
    goal: Pose2D
    obstacles: list = field(default_factory=list)

    def goal_rect(self) -> OrientedRect:
        """Object footprint placed at the goal pose (keypoint targets)."""
        return OrientedRect(self.goal, self.object.half_width, self.object.half_depth)

    def copy(self) -> "WorldState":
        return WorldState(
            sim_time=self.sim_time,
            base=replace(self.base),
            pusher=self.pusher.copy(),
            object=OrientedRect(replace(self.object.pose), self.object.half_width, self.object.half_depth),
            goal=replace(self.goal),
            obstacles=[OrientedRect(replace(o.pose), o.half_width, o.half_depth) for o in self.obstacles],
        )

    # --- text trace -------------------------------------------------------
    # One state per line. Field order:
    #   sim_time base.x base.y base.yaw pusher.x pusher.y
    #   obj.x obj.y obj.yaw obj.hw obj.hd goal.x goal.y goal.yaw
    #   n_obstacles {obs.x obs.y obs.yaw obs.hw obs.hd} * n
    # The default 6 decimal places match the golden-trace format; decimals=17
    # round-trips float64 exactly and is what the replay harness consumes.

    def to_trace_line(self, decimals: int = 6) -> str:
        vals = [
            self.sim_time,
            self.base.x, self.base.y, self.base.yaw,
            self.pusher[0], self.pusher[1],
            self.object.pose.x, self.object.pose.y, self.object.pose.yaw,
            self.object.half_width, self.object.half_depth,
            self.goal.x, self.goal.y, self.goal.yaw,
        ]
        fields = [_fmt(v, decimals) for v in vals]
        fields.append(str(len(self.obstacles)))
        for o in self.obstacles:
            fields.extend(
                _fmt(v, decimals)
                for v in (o.pose.x, o.pose.y, o.pose.yaw, o.half_width, o.half_depth)
            )
        return " ".join(fields)

    @staticmethod
    def from_trace_line(line: str) -> "WorldState":
        parts = line.split()
        f = [float(p) for p in parts[:14]]
        n = int(parts[14])
        obstacles = []
        for k in range(n):
            ox, oy, oyaw, ohw, ohd = (float(p) for p in parts[15 + 5 * k : 20 + 5 * k])
            obstacles.append(OrientedRect(Pose2D(ox, oy, oyaw), ohw, ohd))
        return WorldState(
            sim_time=f[0],
            base=Pose2D(f[1], f[2], f[3]),
            pusher=np.array([f[4], f[5]]),
            object=OrientedRect(Pose2D(f[6], f[7], f[8]), f[9], f[10]),
            goal=Pose2D(f[11], f[12], f[13]),
            obstacles=obstacles,
        )


def _fmt(v: float, decimals: int) -> str:
    if decimals >= 17:
        return "%.17g" % v
    return "%.*f" % (decimals, v)


# --- overlap ---------------------------------------------------------------

def rect_overlap(a: OrientedRect, b: OrientedRect) -> bool:
    """Oriented-rectangle overlap via the separating axis theorem.

    Touching boundaries count as overlap. Candidate axes are the two edge
    normals of each rect; a strict projection gap on any axis separates.
    """
    ca, cb = a.corners(), b.corners()
    for yaw in (a.pose.yaw, b.pose.yaw):
        r = rot2(yaw)
        for axis in (r[:, 0], r[:, 1]):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def disc_rect_overlap(center: np.ndarray, radius: float, rect: OrientedRect) -> bool:
    """Disc vs oriented rect, touching counts."""
    return rect.distance_to_point(center) <= radius


# --- ray casting -----------------------------------------------------------

def _ray_rect_distances(origin: np.ndarray, dirs: np.ndarray, rect: OrientedRect) -> np.ndarray:
    """Entry distance of each unit-direction ray into one rect (inf = miss).

    Slab method in the rect's local frame. A ray starting inside returns 0.
    """
    r = rot2(rect.pose.yaw)
    o = (np.asarray(origin, dtype=float) - rect.center) @ r
    d = np.asarray(dirs, dtype=float) @ r
    half = np.array([rect.half_width, rect.half_depth])

    zero = np.abs(d) < 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(zero, np.inf, 1.0 / np.where(zero, 1.0, d))
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    # A ray parallel to a slab either never leaves it or never enters it.
    inside_slab = np.abs(o) <= half
    lo = np.where(zero, np.where(inside_slab, -np.inf, np.inf), lo)
    hi = np.where(zero, np.where(inside_slab, np.inf, -np.inf), hi)

    tnear = lo.max(axis=-1)
    tfar = hi.min(axis=-1)
    dist = np.maximum(tnear, 0.0)
    return np.where((tnear <= tfar) & (tfar >= 0.0), dist, np.inf)


def ray_cast_many(origin: np.ndarray, angles: np.ndarray, rects: list, max_range: float):
    """Cast a fan of rays against a list of rects.

    Args:
        origin: (2,) ray origin in world coordinates.
        angles: (B,) world-frame ray angles.
        rects: list of OrientedRect.
        max_range: cap on returned distances.

    Returns:
        distances: (B,) entry distances clipped to max_range.
        hit_index: (B,) index of the nearest rect per ray, -1 where nothing is
            hit within max_range.
    """
    angles = np.asarray(angles, dtype=float)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    best = np.full(angles.shape, np.inf)
    hit = np.full(angles.shape, -1, dtype=int)
    for i, rect in enumerate(rects):
        d = _ray_rect_distances(origin, dirs, rect)
        closer = d < best
        best = np.where(closer, d, best)
        hit = np.where(closer, i, hit)
    in_range = best <= max_range
    return np.where(in_range, best, max_range), np.where(in_range, hit, -1)


def ray_cast(origin: np.ndarray, angle: float, rects: list, max_range: float):
    """Single-ray version of `ray_cast_many`; hit index is None on a miss."""
    d, h = ray_cast_many(origin, np.array([angle]), rects, max_range)
    return float(d[0]), (int(h[0]) if h[0] >= 0 else None)


# --- quasi-static stepping ---------------------------------------------------

@dataclass
class PushContact:
    """Where and how the pusher sweep met the object, in object-local terms."""

    s: float                 # segment parameter of first contact in [0, 1]
    normal_local: np.ndarray  # inward face normal, object frame
    lever: float             # lever arm of tangential drag: center-to-face distance
    disp_local: np.ndarray   # pusher displacement after contact, object frame


def _segment_rect_contact(p0: np.ndarray, p1: np.ndarray, rect: OrientedRect):
    """First contact of the swept segment p0->p1 with a rect, or None.

    If p0 already lies inside, contact is at s=0 on the face of least
    penetration.
    """
    l0 = rect.to_local(p0)
    l1 = rect.to_local(p1)
    half = np.array([rect.half_width, rect.half_depth])

    if np.all(np.abs(l0) <= half):
        depths = half - np.abs(l0)
        axis = int(np.argmin(depths))
        n = np.zeros(2)
        # Inward: from the nearest face toward the center.
        n[axis] = -math.copysign(1.0, l0[axis]) if l0[axis] != 0.0 else 1.0
        s = 0.0
    else:
        d = l1 - l0
        zero = np.abs(d) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(zero, np.inf, 1.0 / np.where(zero, 1.0, d))
            t1 = (-half - l0) * inv
            t2 = (half - l0) * inv
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        inside = np.abs(l0) <= half
        lo = np.where(zero, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(zero, np.where(inside, np.inf, -np.inf), hi)
        tnear = float(lo.max())
        tfar = float(hi.min())
        if not (0.0 <= tnear <= 1.0 and tnear <= tfar):
            return None
        axis = int(np.argmax(lo))
        n = np.zeros(2)
        n[axis] = math.copysign(1.0, d[axis])
        s = tnear

    disp = (1.0 - s) * (l1 - l0)
    return PushContact(s=s, normal_local=n, lever=float(half[axis]), disp_local=disp)


def push_object(rect: OrientedRect, p0: np.ndarray, p1: np.ndarray, max_disp: float) -> OrientedRect:
    """Apply the quasi-static point-push rule for one pusher sweep.

    The object translates by the post-contact pusher displacement component
    along the inward contact normal (capped at max_disp) and rotates about its
    center by -tangential_component * lever / half_diagonal. The lever arm is
    the center-to-face distance: a sticky contact dragged along a face exerts
    its torque about the support center through that moment arm, so sliding in
    +t spins the object clockwise regardless of where on the face the contact
    sits. A miss returns the rect unchanged.
    """
    contact = _segment_rect_contact(np.asarray(p0, float), np.asarray(p1, float), rect)
    if contact is None:
        return rect
    n = contact.normal_local
    t = np.array([-n[1], n[0]])
    dn = max(float(contact.disp_local @ n), 0.0)
    dt = float(contact.disp_local @ t)
    dn = min(dn, max_disp)

    translation_world = rot2(rect.pose.yaw) @ (dn * n)
    dyaw = -dt * contact.lever / rect.half_diagonal
    new_pose = Pose2D(
        rect.pose.x + translation_world[0],
        rect.pose.y + translation_world[1],
        rect.pose.yaw + dyaw,
    )
    return OrientedRect(new_pose, rect.half_width, rect.half_depth)


def step_kinematics(
    state: WorldState,
    action: Action,
    dt: float,
    *,
    v_max: float = 0.8,
    pusher_v_max: float = 0.8,
    reach_radius: float = 1.2,
    base_only: bool = False,
    pin_offset: float = 0.4,
) -> WorldState:
    """Advance the world by one control step under a velocity command.

    Order of effects: the base translates in the world frame (yaw is constant,
    the base is holonomic and never rotates mid-episode); the pusher moves by
    its commanded base-frame velocity and is then clamped back onto the reach
    disc around the new base position (or pinned pin_offset ahead of the base
    when base_only is set); if the pusher's swept segment hits the object, the
    quasi-static push rule moves the object, with its per-step displacement
    capped at v_max * dt. Obstacles never move. Collision flags are not
    computed here.
    """
    r = rot2(state.base.yaw)
    base_v = _clamp_norm(action.base_velocity, v_max)
    new_base_pos = state.base.position + r @ base_v * dt
    new_base = Pose2D(new_base_pos[0], new_base_pos[1], state.base.yaw)

    p0 = state.pusher.astype(float)
    if base_only:
        heading = r @ np.array([1.0, 0.0])
        p1 = new_base_pos + pin_offset * heading
    else:
        pusher_v = _clamp_norm(action.pusher_velocity, pusher_v_max)
        p1 = p0 + r @ pusher_v * dt
        offset = p1 - new_base_pos
        dist = float(np.linalg.norm(offset))
        if dist > reach_radius:
            p1 = new_base_pos + offset * (reach_radius / dist)

    new_object = push_object(state.object, p0, p1, v_max * dt)

    return WorldState(
        sim_time=state.sim_time + dt,
        base=new_base,
        pusher=p1,
        object=new_object,
        goal=replace(state.goal),
        obstacles=list(state.obstacles),
    )
