"""Episode protocol for goal-directed pushing among spawning obstacles.

World layout (all lengths scaled by world_scale): the push axis is +x from the
object's start region around the origin; obstacles appear at random times
inside a band 3-11 m ahead of the initial object position; the goal pose sits
in a region beyond that band, so obstacles never spawn on the goal. The robot
starts behind the object facing it, with the point pusher at the reach
boundary toward the object.

Per step: integrate kinematics, spawn due obstacles (with overlap rejection),
scan, update the confidence map, then compute reward / termination and the
observation for the next decision. Success means the mean corner-keypoint
distance between object and goal footprint is below the tolerance; collision
means the object or the base disc touches an obstacle; timeout at 50 s.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .geometry import (
    Action,
    OrientedRect,
    Pose2D,
    WorldState,
    disc_rect_overlap,
    normalize_angle,
    rect_overlap,
    rot2,
    step_kinematics,
)
from .perception import (
    OBJECT_FILTERED,
    REALISTIC,
    ConfidenceMap,
    LidarScan,
    PoolEncoder,
    local_window,
    simulate_lidar,
)

UNIFORM = "uniform"
ADVERSARIAL = "adversarial"

PUSHER_CLEARANCE = 0.1  # spawn-rejection disc around the point pusher


@dataclass
class RewardConfig:
    """Weights and shape constants of the six per-step reward terms."""

    w_keypoint: float = 4.0
    w_direction: float = 2.0
    w_speed: float = 1.0
    w_contact: float = 1.0
    w_action_rate: float = -0.1
    w_action_accel: float = -0.1
    keypoint_sharpness: float = 0.25
    direction_sharpness: float = 5.0
    contact_sharpness: float = 0.1


@dataclass
class EpisodeConfig:
    """Everything an episode needs; round-trips through flat key=value files."""

    object_size: float = 1.0
    obstacle_sizes: tuple = (0.4, 0.6, 1.0)
    obstacle_count: int = -1          # -1: draw uniformly from 0..6 each episode
    scenario: str = UNIFORM
    timeout: float = 50.0
    dt: float = 0.2
    v_max: float = 0.8
    pusher_v_max: float = 0.8
    reach_radius: float = 1.2
    base_radius: float = 0.4
    success_tolerance: float = 0.2
    world_scale: float = 1.0
    beam_count: int = 180
    max_range: float = 6.0
    alpha: float = 0.9
    map_resolution: float = 0.1
    occlusion_mode: str = REALISTIC
    use_latent: bool = True
    base_only: bool = False
    latent_kind: str = "pool"
    encoder_path: str = ""
    spawn_band: tuple = (3.0, 11.0)
    spawn_window_frac: float = 0.6
    max_spawn_redraws: int = 20
    object_yaw_range: float = math.pi / 12
    goal_yaw_range: float = math.pi / 24

    def __post_init__(self):
        self.scenario = str(self.scenario).lower()
        if self.scenario not in (UNIFORM, ADVERSARIAL):
            raise ValueError("scenario must be uniform or adversarial, got %r" % self.scenario)
        if self.occlusion_mode not in (REALISTIC, OBJECT_FILTERED):
            raise ValueError("bad occlusion_mode %r" % self.occlusion_mode)


def _num(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def config_to_kv(cfg) -> dict:
    """Dataclass -> flat {key: string} mapping (stable field order)."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            out[f.name] = ",".join(str(x) if isinstance(x, int) else "%.17g" % x for x in v)
        elif isinstance(v, bool):
            out[f.name] = "true" if v else "false"
        elif isinstance(v, float):
            out[f.name] = "%.17g" % v
        else:
            out[f.name] = str(v)
    return out


def config_from_kv(cls, kv: dict):
    """Build a config dataclass from string values; unknown keys are ignored."""
    kwargs = {}
    for f in fields(cls):
        if f.name not in kv:
            continue
        raw = kv[f.name].strip()
        if f.type in ("tuple", tuple):
            kwargs[f.name] = tuple(_num(x) for x in raw.split(",") if x)
        elif f.type in ("bool", bool):
            kwargs[f.name] = raw.lower() in ("1", "true", "yes")
        elif f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    return cls(**kwargs)


def read_kv_file(path) -> dict:
    """Parse 'key=value' lines; '#' starts a comment, blank lines are skipped."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError("%s:%d: expected key=value, got %r" % (path, lineno, line))
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_kv_file(path, kv: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, v in kv.items():
            f.write("%s=%s\n" % (k, v))


# --- world layout -------------------------------------------------------------

@dataclass
class Layout:
    start_lo: np.ndarray
    start_hi: np.ndarray
    goal_lo: np.ndarray
    goal_hi: np.ndarray
    band_half_width: float


def make_layout(cfg: EpisodeConfig) -> Layout:
    s = cfg.world_scale
    return Layout(
        start_lo=np.array([-0.5, -1.0]) * s,
        start_hi=np.array([0.5, 1.0]) * s,
        goal_lo=np.array([12.0, -2.0]) * s,
        goal_hi=np.array([14.0, 2.0]) * s,
        band_half_width=3.0 * s,
    )


def map_bounds(cfg: EpisodeConfig):
    """Axis-aligned hull of the fixed workspace (regions + spawn band + robot start)."""
    lay = make_layout(cfg)
    s = cfg.world_scale
    lo = np.minimum(lay.start_lo, lay.goal_lo).copy()
    hi = np.maximum(lay.start_hi, lay.goal_hi).copy()
    lo[0] -= cfg.reach_radius + 1.3          # robot starts behind the object
    hi[0] = max(hi[0], lay.start_hi[0] + cfg.spawn_band[1] * s + 1.0)
    lo[1] = min(lo[1], -(lay.band_half_width + 1.0))
    hi[1] = max(hi[1], lay.band_half_width + 1.0)
    return lo, hi


# --- observation / step result --------------------------------------------------

@dataclass
class Observation:
    """Base-frame observation tuple; `vector` is what networks consume.

    o_p (10): pusher position (2), pusher velocity (2), base velocity (2),
        previous commanded action (4), all in the current base frame.
    o_o (6): object position (2), relative yaw, object velocity (2), yaw rate.
    goal (3): goal position (2) and relative yaw.
    z: frozen map latent (zeros when the variant disables it).
    """

    o_p: np.ndarray
    o_o: np.ndarray
    goal: np.ndarray
    z: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.o_p, self.o_o, self.goal, self.z])


def observation_dim(latent_dim: int) -> int:
    return 19 + latent_dim


def observation_input_scale(latent_dim: int) -> np.ndarray:
    """Fixed per-feature input scaling for networks consuming observations.

    Observation values are plain meters/radians (long-range goal entries reach
    ~14), so networks remap them to O(1) internally. Part of the network, not
    of the observation.
    """
    scale = np.ones(observation_dim(latent_dim))
    scale[0:2] = 0.5    # pusher position, bounded by reach
    scale[10:12] = 0.2  # object position
    scale[12] = 0.5
    scale[15] = 0.5
    scale[16:18] = 0.1  # goal position
    scale[18] = 0.5
    return scale


@dataclass
class StepResult:
    observation: Observation
    reward: float
    reward_components: np.ndarray
    collision: bool
    success: bool
    terminal: bool
    info: dict = field(default_factory=dict)


def _to_frame(yaw: float, vec: np.ndarray) -> np.ndarray:
    return rot2(yaw).T @ vec


def assemble_observation(prev: WorldState, cur: WorldState, prev_action: np.ndarray,
                         latent: np.ndarray, dt: float) -> Observation:
    """Build the base-frame observation; velocities are finite differences
    (cur - prev)/dt, so prev == cur yields all-zero velocity entries."""
    yaw = cur.base.yaw
    bp = cur.base.position
    pusher_b = _to_frame(yaw, cur.pusher - bp)
    pusher_vel_b = _to_frame(yaw, (cur.pusher - prev.pusher) / dt)
    base_vel_b = _to_frame(yaw, (bp - prev.base.position) / dt)
    o_p = np.concatenate([pusher_b, pusher_vel_b, base_vel_b, np.asarray(prev_action, float).reshape(4)])

    obj_b = _to_frame(yaw, cur.object.center - bp)
    obj_vel_b = _to_frame(yaw, (cur.object.center - prev.object.center) / dt)
    yaw_rel = normalize_angle(cur.object.pose.yaw - yaw)
    yaw_rate = normalize_angle(cur.object.pose.yaw - prev.object.pose.yaw) / dt
    o_o = np.concatenate([obj_b, [yaw_rel], obj_vel_b, [yaw_rate]])

    goal_b = _to_frame(yaw, cur.goal.position - bp)
    goal = np.concatenate([goal_b, [normalize_angle(cur.goal.yaw - yaw)]])
    return Observation(o_p=o_p, o_o=o_o, goal=goal, z=np.asarray(latent, float))


def keypoint_distance(state: WorldState) -> float:
    """Mean corner-to-corner distance between object and goal footprint,
    correspondence fixed by canonical corner index."""
    d = state.object.corners() - state.goal_rect().corners()
    return float(np.linalg.norm(d, axis=1).mean())


def compute_reward(prev: WorldState, cur: WorldState, action: np.ndarray,
                   prev_action: np.ndarray, prev_prev_action: np.ndarray,
                   contact_target: np.ndarray, rcfg: RewardConfig, dt: float,
                   v_max: float):
    """Six shaped reward terms; returns (total, components).

    Terms: goal keypoint proximity, object-motion alignment with the goal
    direction, object speed, pusher proximity to an episode-fixed perimeter
    point on the object, action rate, and action second difference. The
    alignment term treats a near-stationary object (< 1e-4 m/s) as fully
    misaligned and an object already at the goal as fully aligned.
    """
    a = np.asarray(action, float).reshape(4)
    a1 = np.asarray(prev_action, float).reshape(4)
    a2 = np.asarray(prev_prev_action, float).reshape(4)

    g_diff = cur.goal_rect().corners() - cur.object.corners()
    r1 = rcfg.w_keypoint * math.exp(-rcfg.keypoint_sharpness * float(np.linalg.norm(g_diff)))

    v_o = (cur.object.center - prev.object.center) / dt
    speed = float(np.linalg.norm(v_o))
    if speed < 1e-4:
        r2 = rcfg.w_direction * math.exp(-rcfg.direction_sharpness)
    else:
        to_goal = cur.goal.position - cur.object.center
        dist = float(np.linalg.norm(to_goal))
        dot = 1.0 if dist < 1e-9 else float(v_o @ to_goal) / (speed * dist)
        r2 = rcfg.w_direction * math.exp(rcfg.direction_sharpness * (dot - 1.0))

    r3 = rcfg.w_speed * speed / v_max
    r4 = rcfg.w_contact * math.exp(
        -rcfg.contact_sharpness * float(np.linalg.norm(np.asarray(contact_target) - cur.pusher)))
    r5 = rcfg.w_action_rate * float(np.linalg.norm(a - a1))
    r6 = rcfg.w_action_accel * float(np.linalg.norm(a - 2.0 * a1 + a2))

    comps = np.array([r1, r2, r3, r4, r5, r6])
    return float(comps.sum()), comps


def check_termination(state: WorldState, cfg: EpisodeConfig):
    """(collision, success, terminal). Collision beats success in the same
    step; timeout (sim_time >= timeout) terminates without either flag."""
    collision = False
    for obs in state.obstacles:
        if rect_overlap(state.object, obs) or disc_rect_overlap(state.base.position, cfg.base_radius, obs):
            collision = True
            break
    success = (not collision) and keypoint_distance(state) < cfg.success_tolerance
    terminal = collision or success or state.sim_time >= cfg.timeout
    return collision, success, terminal


# --- obstacle schedule ----------------------------------------------------------

@dataclass
class PendingObstacle:
    time: float
    half_w: float
    half_d: float
    x: float
    y: float
    yaw: float
    spawned: bool = False
    skipped: bool = False


@dataclass
class ObstacleSchedule:
    """Pre-drawn spawn plan plus the sampling frame used for overlap redraws."""

    entries: list
    origin: np.ndarray       # initial object position
    axis: np.ndarray         # unit vector toward the goal
    along: tuple             # scaled spawn band
    lateral_limit: float

    def draw_position(self, rng):
        along = rng.uniform(self.along[0], self.along[1])
        lateral = rng.uniform(-self.lateral_limit, self.lateral_limit)
        perp = np.array([-self.axis[1], self.axis[0]])
        return self.origin + along * self.axis + lateral * perp

    def hash(self) -> str:
        h = hashlib.md5()
        h.update(("%.17g %.17g %.17g %.17g %.17g" % (
            self.origin[0], self.origin[1], self.axis[0], self.axis[1], self.lateral_limit)).encode())
        for e in self.entries:
            h.update(("%.17g %.17g %.17g %.17g %.17g %.17g" % (
                e.time, e.half_w, e.half_d, e.x, e.y, e.yaw)).encode())
        return h.hexdigest()


def build_schedule(cfg: EpisodeConfig, object_pos, goal_pos, rng) -> ObstacleSchedule:
    axis = np.asarray(goal_pos, float) - np.asarray(object_pos, float)
    axis = axis / np.linalg.norm(axis)
    lay = make_layout(cfg)
    lateral = cfg.object_size if cfg.scenario == ADVERSARIAL else lay.band_half_width
    along = (cfg.spawn_band[0] * cfg.world_scale, cfg.spawn_band[1] * cfg.world_scale)
    sched = ObstacleSchedule(entries=[], origin=np.asarray(object_pos, float).copy(),
                             axis=axis, along=along, lateral_limit=lateral)

    count = cfg.obstacle_count if cfg.obstacle_count >= 0 else int(rng.integers(0, 7))
    for _ in range(count):
        t = rng.uniform(0.0, cfg.spawn_window_frac * cfg.timeout)
        size = float(cfg.obstacle_sizes[rng.integers(len(cfg.obstacle_sizes))])
        pos = sched.draw_position(rng)
        yaw = rng.uniform(-math.pi / 4, math.pi / 4)
        sched.entries.append(PendingObstacle(t, size / 2, size / 2, pos[0], pos[1], yaw))
    sched.entries.sort(key=lambda e: e.time)
    return sched


def _spawn_blocked(rect: OrientedRect, state: WorldState, cfg: EpisodeConfig) -> bool:
    if rect_overlap(rect, state.object):
        return True
    if disc_rect_overlap(state.base.position, cfg.base_radius, rect):
        return True
    if disc_rect_overlap(state.pusher, PUSHER_CLEARANCE, rect):
        return True
    return any(rect_overlap(rect, o) for o in state.obstacles)


def spawn_pending(state: WorldState, schedule: ObstacleSchedule, rng, cfg: EpisodeConfig):
    """Insert every schedule entry whose time has come, redrawing positions
    that would overlap an existing body (object, base disc, pusher clearance
    disc, or another obstacle). An entry whose redraw budget is exhausted is
    skipped and reported. Returns a list of event dicts."""
    events = []
    for e in schedule.entries:
        if e.spawned or e.skipped or e.time > state.sim_time:
            continue
        pos = np.array([e.x, e.y])
        yaw = e.yaw
        placed = False
        for _ in range(cfg.max_spawn_redraws + 1):
            rect = OrientedRect(Pose2D(pos[0], pos[1], yaw), e.half_w, e.half_d)
            if not _spawn_blocked(rect, state, cfg):
                state.obstacles.append(rect)
                e.spawned = True
                e.x, e.y, e.yaw = pos[0], pos[1], yaw
                placed = True
                break
            pos = schedule.draw_position(rng)
            yaw = rng.uniform(-math.pi / 4, math.pi / 4)
        if placed:
            events.append({"event": "spawn", "time": state.sim_time, "x": e.x, "y": e.y,
                           "half_w": e.half_w, "half_d": e.half_d})
        else:
            e.skipped = True
            events.append({"event": "spawn_skipped", "time": state.sim_time})
    return events


# --- rng state packing ----------------------------------------------------------

_U64 = (1 << 64) - 1


def rng_state_array(rng) -> np.ndarray:
    st = rng.bit_generator.state
    s, inc = st["state"]["state"], st["state"]["inc"]
    return np.array([s & _U64, s >> 64, inc & _U64, inc >> 64,
                     st["has_uint32"], st["uinteger"]], dtype=np.uint64)


def rng_from_state_array(arr) -> np.random.Generator:
    arr = np.asarray(arr, dtype=np.uint64)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(arr[0]) | (int(arr[1]) << 64),
                  "inc": int(arr[2]) | (int(arr[3]) << 64)},
        "has_uint32": int(arr[4]),
        "uinteger": int(arr[5]),
    }
    return rng


# --- environment ----------------------------------------------------------------

def _pack_world(state: WorldState) -> np.ndarray:
    head = [state.sim_time, state.base.x, state.base.y, state.base.yaw,
            state.pusher[0], state.pusher[1],
            state.object.pose.x, state.object.pose.y, state.object.pose.yaw,
            state.object.half_width, state.object.half_depth,
            state.goal.x, state.goal.y, state.goal.yaw, float(len(state.obstacles))]
    for o in state.obstacles:
        head.extend([o.pose.x, o.pose.y, o.pose.yaw, o.half_width, o.half_depth])
    return np.array(head)


def _unpack_world(arr) -> WorldState:
    arr = np.asarray(arr, dtype=float)
    n = int(arr[14])
    obstacles = [OrientedRect(Pose2D(*arr[15 + 5 * k: 18 + 5 * k]), arr[18 + 5 * k], arr[19 + 5 * k])
                 for k in range(n)]
    return WorldState(sim_time=arr[0], base=Pose2D(arr[1], arr[2], arr[3]),
                      pusher=arr[4:6].copy(),
                      object=OrientedRect(Pose2D(arr[6], arr[7], arr[8]), arr[9], arr[10]),
                      goal=Pose2D(arr[11], arr[12], arr[13]), obstacles=obstacles)


class PushEnv:
    """Stateful episode wrapper tying simulator, sensing, and rewards together.

    Auto-reseeding: reset() without a seed draws the next episode seed from the
    instance RNG, so a (config, instance_seed) pair fully determines every
    trajectory given the same action sequence.
    """

    def __init__(self, cfg: EpisodeConfig, instance_seed: int = 0, encoder=None, rcfg=None):
        self.cfg = cfg
        self.rcfg = rcfg or RewardConfig()
        self.encoder = encoder if encoder is not None else PoolEncoder()
        self.latent_dim = self.encoder.latent_dim
        self._rng = np.random.default_rng((int(instance_seed), 0x5EED))
        lo, hi = map_bounds(cfg)
        self.cmap = ConfidenceMap.covering(lo, hi, margin=2.0,
                                           resolution=cfg.map_resolution, alpha=cfg.alpha)
        self.state = None
        self.prev_state = None
        self.schedule = None
        self.episode_seed = None
        self._prev_action = np.zeros(4)
        self._prev_prev_action = np.zeros(4)
        self._contact_local = np.zeros(2)

    # -- episode control ------------------------------------------------------

    def reset(self, seed=None) -> Observation:
        if seed is None:
            seed = int(self._rng.integers(0, 2 ** 62))
        self.episode_seed = int(seed)
        rng = np.random.default_rng(self.episode_seed)
        lay = make_layout(self.cfg)

        obj_pos = rng.uniform(lay.start_lo, lay.start_hi)
        obj_yaw = rng.uniform(-self.cfg.object_yaw_range, self.cfg.object_yaw_range)
        half = self.cfg.object_size / 2.0
        obj = OrientedRect(Pose2D(obj_pos[0], obj_pos[1], obj_yaw), half, half)

        goal_pos = rng.uniform(lay.goal_lo, lay.goal_hi)
        goal = Pose2D(goal_pos[0], goal_pos[1],
                      rng.uniform(-self.cfg.goal_yaw_range, self.cfg.goal_yaw_range))

        u = (goal.position - obj_pos) / np.linalg.norm(goal.position - obj_pos)
        back = self.cfg.reach_radius + obj.half_diagonal + 0.1
        base_pos = obj_pos - back * u
        base = Pose2D(base_pos[0], base_pos[1], math.atan2(u[1], u[0]))
        # base_only pins the pusher from the first step; start it pinned so the
        # initial observation is consistent. Drawn quantities above are
        # identical across variants, keeping paired episodes paired.
        pin = self.cfg.base_radius if self.cfg.base_only else self.cfg.reach_radius
        pusher = base_pos + pin * u

        self.state = WorldState(sim_time=0.0, base=base, pusher=pusher, object=obj,
                                goal=goal, obstacles=[])
        self.prev_state = self.state.copy()
        self.schedule = build_schedule(self.cfg, obj_pos, goal.position, rng)

        # Episode-fixed pusher target: a random point on the object perimeter,
        # stored in the object frame so it rides along as the object moves.
        side = int(rng.integers(4))
        offset = rng.uniform(-1.0, 1.0)
        if side == 0:
            self._contact_local = np.array([half, offset * half])
        elif side == 1:
            self._contact_local = np.array([-half, offset * half])
        elif side == 2:
            self._contact_local = np.array([offset * half, half])
        else:
            self._contact_local = np.array([offset * half, -half])

        self._prev_action = np.zeros(4)
        self._prev_prev_action = np.zeros(4)
        self.cmap.reset()
        scan = self._scan()
        self.cmap.update(scan, self.state.base.position)
        return self._observation()

    def _scan(self) -> LidarScan:
        return simulate_lidar(self.state, beam_count=self.cfg.beam_count,
                              max_range=self.cfg.max_range, mode=self.cfg.occlusion_mode)

    def latent(self) -> np.ndarray:
        if not self.cfg.use_latent:
            return np.zeros(self.latent_dim)
        return self.encoder.encode(local_window(self.cmap, self.state.base.position))

    def _observation(self) -> Observation:
        return assemble_observation(self.prev_state, self.state, self._prev_action,
                                    self.latent(), self.cfg.dt)

    def contact_target_world(self) -> np.ndarray:
        o = self.state.object
        return o.center + rot2(o.pose.yaw) @ self._contact_local

    def step(self, raw_action) -> StepResult:
        """Advance one control period under a raw policy action (4,)."""
        if self.state is None:
            raise RuntimeError("step() before reset()")
        cmd = Action.clamped(np.asarray(raw_action, float), self.cfg.v_max, self.cfg.pusher_v_max)
        prev = self.state
        cur = step_kinematics(prev, cmd, self.cfg.dt,
                              v_max=self.cfg.v_max, pusher_v_max=self.cfg.pusher_v_max,
                              reach_radius=self.cfg.reach_radius, base_only=self.cfg.base_only,
                              pin_offset=self.cfg.base_radius)
        events = spawn_pending(cur, self.schedule, self._rng, self.cfg)
        self.state = cur
        self.prev_state = prev

        scan = self._scan()
        self.cmap.update(scan, cur.base.position)

        collision, success, terminal = check_termination(cur, self.cfg)
        cmd_arr = cmd.as_array()
        reward, comps = compute_reward(prev, cur, cmd_arr, self._prev_action,
                                       self._prev_prev_action, self.contact_target_world(),
                                       self.rcfg, self.cfg.dt, self.cfg.v_max)
        self._prev_prev_action = self._prev_action
        self._prev_action = cmd_arr
        obs = self._observation()
        info = {
            "sim_time": cur.sim_time,
            "keypoint_distance": keypoint_distance(cur),
            "spawn_events": events,
            "episode_seed": self.episode_seed,
            "schedule_hash": self.schedule.hash(),
        }
        return StepResult(observation=obs, reward=reward, reward_components=comps,
                          collision=collision, success=success, terminal=terminal, info=info)

    # -- snapshot/restore (bitwise resume) -------------------------------------

    def state_dict(self) -> dict:
        sched = self.schedule
        entries = np.array([[e.time, e.half_w, e.half_d, e.x, e.y, e.yaw,
                             float(e.spawned), float(e.skipped)] for e in sched.entries]).reshape(-1, 8)
        d = {
            "world": _pack_world(self.state),
            "prev_world": _pack_world(self.prev_state),
            "prev_actions": np.stack([self._prev_action, self._prev_prev_action]),
            "contact_local": self._contact_local.copy(),
            "sched_entries": entries,
            "sched_frame": np.concatenate([sched.origin, sched.axis,
                                           [sched.along[0], sched.along[1], sched.lateral_limit]]),
            "episode_seed": np.array([self.episode_seed if self.episode_seed is not None else -1]),
            "rng": rng_state_array(self._rng),
        }
        for k, v in self.cmap.state_arrays().items():
            d["cmap_" + k] = v
        return d

    def load_state_dict(self, d) -> None:
        self.state = _unpack_world(d["world"])
        self.prev_state = _unpack_world(d["prev_world"])
        self._prev_action = np.asarray(d["prev_actions"][0], float).copy()
        self._prev_prev_action = np.asarray(d["prev_actions"][1], float).copy()
        self._contact_local = np.asarray(d["contact_local"], float).copy()
        frame = np.asarray(d["sched_frame"], float)
        entries = [PendingObstacle(time=r[0], half_w=r[1], half_d=r[2], x=r[3], y=r[4],
                                   yaw=r[5], spawned=bool(r[6]), skipped=bool(r[7]))
                   for r in np.asarray(d["sched_entries"], float)]
        self.schedule = ObstacleSchedule(entries=entries, origin=frame[0:2], axis=frame[2:4],
                                         along=(frame[4], frame[5]), lateral_limit=frame[6])
        self.episode_seed = int(d["episode_seed"][0])
        self._rng = rng_from_state_array(d["rng"])
        self.cmap = ConfidenceMap.from_state_arrays(
            {k[5:]: d[k] for k in d if k.startswith("cmap_")})
