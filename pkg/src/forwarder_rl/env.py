"""The log-loading MDP: reset, action integration, log dynamics, observation.

State is stored struct-of-arrays over N environments; a single environment
is just N = 1. Joint targets are integrated from the agent's 7-vector action
(U = clip(q + A*c*dt, limits)); joints track their targets at a rate limit.
Grasping is attachment-based: once both grapple tips straddle the log close
to its axis with the jaws shut past the close threshold, the log is frozen
to the grapple-body frame until the jaws open again. A free log falls
ballistically and rests on the supporting surface (ground, terrain or bed).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EnvConfig, RewardConfig
from .model import (
    ACTIVE_IDX,
    GRAVITY,
    KinematicChain,
    BodyPoses,
    clip_to_limits,
    forward_kinematics,
    resolve_passive_joints,
)
from .rewards import RewardTerms, gating_factor, proximity_score, reward_r1, reward_r2, reward_r3
from .transforms import (
    point_segment_distance,
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_rotate,
    wrap_angle,
)

OBS_DIM = 53


@dataclass
class WorldState:
    """Full simulation state for N environments (arrays share leading dim N)."""
    q: np.ndarray            # (N, 9)
    q_dot: np.ndarray        # (N, 9)
    targets: np.ndarray      # (N, 9) joint position goals U
    log_pos: np.ndarray      # (N, 3)
    log_quat: np.ndarray     # (N, 4)
    log_vel: np.ndarray      # (N, 3)
    attached: np.ndarray     # (N,) bool
    attach_pos: np.ndarray   # (N, 3)  log position in the grapple-body frame
    attach_quat: np.ndarray  # (N, 4)  log orientation in the grapple-body frame
    poses: BodyPoses
    prev_gb_pos: np.ndarray  # (N, 3) grapple-body position one step ago
    step_count: np.ndarray   # (N,) int

    @property
    def num_envs(self) -> int:
        return self.q.shape[0]

    def copy(self) -> "WorldState":
        p = self.poses
        return WorldState(
            self.q.copy(), self.q_dot.copy(), self.targets.copy(),
            self.log_pos.copy(), self.log_quat.copy(), self.log_vel.copy(),
            self.attached.copy(), self.attach_pos.copy(), self.attach_quat.copy(),
            BodyPoses(p.positions.copy(), p.quats.copy(),
                      p.tip_left.copy(), p.tip_right.copy()),
            self.prev_gb_pos.copy(), self.step_count.copy(),
        )


@dataclass
class StepResult:
    observation: np.ndarray   # (N, 53)
    reward_terms: RewardTerms
    done: np.ndarray          # (N,) bool
    success: np.ndarray       # (N,) bool
    info: dict                # distances and flags, arrays of shape (N,)


# ---------------------------------------------------------------------------
# Terrain / support surface
# ---------------------------------------------------------------------------

def _hash_cells(ix, iy, seed):
    """Deterministic uniform [0,1) per integer cell (splitmix-style)."""
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ np.uint64(seed * 0x165667B19E3779F9 & 0xFFFFFFFFFFFFFFFF))
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return h.astype(np.float64) / float(2**64)


def terrain_height(config: EnvConfig, xy: np.ndarray) -> np.ndarray:
    """Ground height under x-y points of shape (..., 2)."""
    xy = np.asarray(xy, dtype=float)
    if config.terrain_kind == "flat":
        return np.zeros(xy.shape[:-1])
    if config.terrain_kind == "elevated":
        return np.full(xy.shape[:-1], float(config.terrain_height))
    ix = np.floor(xy[..., 0] / config.terrain_cell).astype(np.int64)
    iy = np.floor(xy[..., 1] / config.terrain_cell).astype(np.int64)
    return _hash_cells(ix, iy, config.terrain_seed) * float(config.terrain_amplitude)


def _in_bed_footprint(chain: KinematicChain, xy: np.ndarray) -> np.ndarray:
    c = np.array(chain.bed.center[:2])
    h = np.array(chain.bed.half_extents[:2])
    return np.all(np.abs(xy - c) <= h, axis=-1)


def support_z(chain: KinematicChain, config: EnvConfig, xy: np.ndarray) -> np.ndarray:
    """Rest height of the log center over x-y points of shape (..., 2)."""
    ground = terrain_height(config, xy)
    bed = _in_bed_footprint(chain, xy)
    return np.where(bed, chain.bed.top_z, ground) + config.log_radius


# ---------------------------------------------------------------------------
# Reset
# ---------------------------------------------------------------------------

def reset(chain: KinematicChain, config: EnvConfig, rng: np.random.Generator,
          n: int = 1) -> WorldState:
    """Fresh state for n environments drawn from one rng stream."""
    ranges = np.asarray(config.joint_init_ranges, dtype=float)  # (7, 2)
    q = np.zeros((n, 9))
    q[:, ACTIVE_IDX] = rng.uniform(ranges[:, 0], ranges[:, 1], size=(n, 7))
    q = resolve_passive_joints(chain, q)
    q = clip_to_limits(chain, q)

    xmin, xmax, ymin, ymax, yaw_lo, yaw_hi = config.log_spawn_region
    log_xy = rng.uniform([xmin, ymin], [xmax, ymax], size=(n, 2))
    yaw = rng.uniform(yaw_lo, yaw_hi, size=n)
    log_pos = np.concatenate(
        [log_xy, support_z(chain, config, log_xy)[:, None]], axis=1)
    log_quat = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)

    poses = forward_kinematics(chain, q, check=False)
    return WorldState(
        q=q,
        q_dot=np.zeros((n, 9)),
        targets=q.copy(),
        log_pos=log_pos,
        log_quat=log_quat,
        log_vel=np.zeros((n, 3)),
        attached=np.zeros(n, dtype=bool),
        attach_pos=np.zeros((n, 3)),
        attach_quat=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        poses=poses,
        prev_gb_pos=poses.p_gb.copy(),
        step_count=np.zeros(n, dtype=np.int64),
    )


def check_spawn_reachable(chain: KinematicChain, config: EnvConfig,
                          samples: int = 512, margin: float = 0.3) -> None:
    """Startup check: the spawn rectangle must lie inside the FK-sampled
    horizontal reach annulus of the grapple body. Raises on failure."""
    rng = np.random.default_rng(0)
    lo = chain.min_limits[ACTIVE_IDX].copy()
    hi = chain.max_limits[ACTIVE_IDX].copy()
    q = np.zeros((samples, 9))
    q[:, ACTIVE_IDX] = rng.uniform(lo, hi, size=(samples, 7))
    q = resolve_passive_joints(chain, q)
    poses = forward_kinematics(chain, q, check=False)
    pivot = poses.positions[0, 1, :2]
    radius = np.linalg.norm(poses.p_gb[:, :2] - pivot, axis=1)
    # bearings are measured relative to the arm's zero direction (-x) to
    # avoid the atan2 branch cut right where the arm points at rest
    bearing = wrap_angle(np.arctan2(poses.p_gb[:, 1] - pivot[1],
                                    poses.p_gb[:, 0] - pivot[0]) - np.pi)

    xmin, xmax, ymin, ymax = config.log_spawn_region[:4]
    corners = np.array([[xmin, ymin], [xmin, ymax], [xmax, ymin], [xmax, ymax]])
    cr = np.linalg.norm(corners - pivot, axis=1)
    cb = wrap_angle(np.arctan2(corners[:, 1] - pivot[1],
                               corners[:, 0] - pivot[0]) - np.pi)
    if cr.max() > radius.max() - margin or cr.min() < radius.min() + margin:
        raise ValueError("log spawn region outside manipulator radial reach")
    if np.any(cb > bearing.max()) or np.any(cb < bearing.min()):
        raise ValueError("log spawn region outside manipulator slew range")


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def apply_action(chain: KinematicChain, config: EnvConfig,
                 q: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Joint position goals U = clip(q + A*c*dt, limits) on active joints."""
    action = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    c = np.asarray(config.action_scale, dtype=float)
    U = np.array(q, dtype=float, copy=True)
    U[..., ACTIVE_IDX] = q[..., ACTIVE_IDX] + action * c * config.dt
    return clip_to_limits(chain, U)


def grasp_check(state: WorldState, chain: KinematicChain,
                config: EnvConfig) -> np.ndarray:
    """Capture condition per env (evaluated for detached envs).

    True iff both tips are within the capture radius of the log axis
    segment, the log center sits between the tips along the grapple lateral
    axis, and both jaw joints are shut past the close threshold.
    """
    poses = state.poses
    axis_dir = quat_rotate(state.log_quat, np.array([1.0, 0.0, 0.0]))
    half = 0.5 * config.log_length
    a = state.log_pos - half * axis_dir
    b = state.log_pos + half * axis_dir
    d_l = point_segment_distance(poses.tip_left, a, b)
    d_r = point_segment_distance(poses.tip_right, a, b)
    near = (d_l <= config.grasp_capture_radius) & (d_r <= config.grasp_capture_radius)

    lateral = quat_rotate(poses.H_gb, np.array([0.0, 1.0, 0.0]))
    yl = np.sum(lateral * (poses.tip_left - state.log_pos), axis=-1)
    yr = np.sum(lateral * (poses.tip_right - state.log_pos), axis=-1)
    straddle = (yl > 0.0) & (yr < 0.0)

    closed = (state.q[:, 7] >= config.grasp_close_threshold) & \
             (state.q[:, 8] >= config.grasp_close_threshold)
    return near & straddle & closed


def release_check(state: WorldState, config: EnvConfig) -> np.ndarray:
    """True where both jaws have opened past the close threshold."""
    return (state.q[:, 7] < config.grasp_close_threshold) & \
           (state.q[:, 8] < config.grasp_close_threshold)


def completion_score(log_pos, gb_pos, target_point):
    d_ltgt = np.linalg.norm(log_pos - target_point, axis=-1)
    d_lgb = np.linalg.norm(log_pos - gb_pos, axis=-1)
    d_gbtgt = np.linalg.norm(gb_pos - target_point, axis=-1)
    return (proximity_score(d_ltgt) * proximity_score(d_lgb)
            * proximity_score(d_gbtgt))


def build_observation(state: WorldState, chain: KinematicChain,
                      config: EnvConfig) -> np.ndarray:
    """Flat 53-vector per env: [S_fwd(14) | S_g(16) | S_l(7) | S_task(16)]."""
    poses = state.poses
    n = state.num_envs
    p_gb = poses.p_gb
    gb_vel = (p_gb - state.prev_gb_pos) / config.dt
    p_unl = np.array(chain.bed.unload_point)
    p_tgt = np.array(chain.bed.target_point)
    a_l = completion_score(state.log_pos, p_gb, p_tgt)
    obs = np.concatenate([
        state.q[:, ACTIVE_IDX],               # 7
        state.q_dot[:, ACTIVE_IDX],           # 7
        p_gb,                                 # 3
        poses.H_gb,                           # 4
        gb_vel,                               # 3
        poses.tip_left,                       # 3
        poses.tip_right,                      # 3
        state.log_pos,                        # 3
        state.log_quat,                       # 4
        np.tile(p_unl, (n, 1)),               # 3
        np.tile(p_tgt, (n, 1)),               # 3
        p_gb - state.log_pos,                 # 3
        state.log_pos - p_unl,                # 3
        state.log_pos - p_tgt,                # 3
        a_l[:, None],                         # 1
    ], axis=1)
    return obs


def success_check(state: WorldState, chain: KinematicChain,
                  config: EnvConfig) -> np.ndarray:
    """Log delivered: at the target within the radius and settled."""
    d = np.linalg.norm(state.log_pos - np.array(chain.bed.target_point), axis=-1)
    slow = np.linalg.norm(state.log_vel, axis=-1) <= config.success_speed
    ok = (d <= config.success_radius) & slow
    if config.require_release:
        ok &= ~state.attached
    return ok


def _free_log_dynamics(state: WorldState, chain: KinematicChain,
                       config: EnvConfig, free: np.ndarray) -> None:
    """Ballistic fall + support clamp + bed-wall no-entry, in place."""
    if not np.any(free):
        return
    dt = config.dt
    pos = state.log_pos[free]
    vel = state.log_vel[free]
    new_xy = pos[:, :2] + vel[:, :2] * dt

    # bed guard walls block horizontal crossing below the guard top
    below_guard = pos[:, 2] - config.log_radius < chain.bed.guard_top_z
    was_in = _in_bed_footprint(chain, pos[:, :2])
    now_in = _in_bed_footprint(chain, new_xy)
    blocked = below_guard & (was_in != now_in)
    new_xy[blocked] = pos[blocked, :2]
    vel[blocked, 0] = 0.0
    vel[blocked, 1] = 0.0

    new_z = pos[:, 2] + vel[:, 2] * dt - 0.5 * GRAVITY * dt * dt
    new_vz = vel[:, 2] - GRAVITY * dt
    floor = support_z(chain, config, new_xy)
    landed = new_z <= floor + 1e-12
    new_z = np.where(landed, floor, new_z)
    vel[landed] = 0.0
    vel[~landed, 2] = new_vz[~landed]

    state.log_pos[free] = np.concatenate([new_xy, new_z[:, None]], axis=1)
    state.log_vel[free] = vel


def step(state: WorldState, action: np.ndarray, chain: KinematicChain,
         config: EnvConfig, reward_config: RewardConfig) -> tuple:
    """Advance all envs one step. Returns (new WorldState, StepResult)."""
    state = state.copy()
    dt = config.dt
    q_old = state.q.copy()
    log_pos_old = state.log_pos.copy()

    # 1. targets from the action
    state.targets = apply_action(chain, config, state.q, action)

    # 2. rate-limited tracking toward targets (active joints)
    vmax = np.asarray(config.max_joint_speed, dtype=float)
    dq = np.clip(state.targets - state.q, -vmax * dt, vmax * dt)
    state.q = state.q + dq

    # 3. passive joints hang vertically
    state.q = resolve_passive_joints(chain, state.q)
    state.q = clip_to_limits(chain, state.q)
    state.q_dot = (state.q - q_old) / dt

    # 4. kinematics
    state.prev_gb_pos = state.poses.p_gb.copy()
    state.poses = forward_kinematics(chain, state.q, check=False)

    # 5. attachment bookkeeping and log motion
    releasing = state.attached & release_check(state, config)
    state.attached &= ~releasing

    att = state.attached
    if np.any(att):
        gb_q = state.poses.H_gb[att]
        state.log_pos[att] = state.poses.p_gb[att] + quat_rotate(
            gb_q, state.attach_pos[att])
        state.log_quat[att] = quat_normalize(
            quat_mul(gb_q, state.attach_quat[att]))
        state.log_vel[att] = (state.log_pos[att] - log_pos_old[att]) / dt

    _free_log_dynamics(state, chain, config, ~state.attached)

    grasp_now = ~state.attached & grasp_check(state, chain, config)
    if np.any(grasp_now):
        gb_q = state.poses.H_gb[grasp_now]
        inv = quat_conj(gb_q)
        state.attach_pos[grasp_now] = quat_rotate(
            inv, state.log_pos[grasp_now] - state.poses.p_gb[grasp_now])
        state.attach_quat[grasp_now] = quat_normalize(
            quat_mul(inv, state.log_quat[grasp_now]))
        state.attached |= grasp_now

    state.step_count = state.step_count + 1

    # 6. observation, rewards, termination
    obs = build_observation(state, chain, config)
    b = gating_factor(state.attached, reward_config)
    p_unl = np.array(chain.bed.unload_point)
    p_tgt = np.array(chain.bed.target_point)
    terms = RewardTerms(
        r1=reward_r1(state.log_pos, state.poses.p_gb),
        r2=reward_r2(state.log_pos, p_unl, b),
        r3=reward_r3(state.log_pos, state.log_vel[:, 2], p_tgt, b, reward_config),
    )
    success = success_check(state, chain, config)
    done = success | (state.step_count >= config.episode_length)
    info = {
        "d_lgb": np.linalg.norm(state.log_pos - state.poses.p_gb, axis=-1),
        "d_lunl": np.linalg.norm(state.log_pos - p_unl, axis=-1),
        "d_ltgt": np.linalg.norm(state.log_pos - p_tgt, axis=-1),
        "attached": state.attached.copy(),
    }
    return state, StepResult(obs, terms, done, success, info)


# ---------------------------------------------------------------------------
# Batched environment with per-env rng streams and auto-reset
# ---------------------------------------------------------------------------

class ForwarderEnv:
    """N independent environments stepped together.

    Each env owns an rng stream spawned from the config seed, so trajectories
    are identical whether envs are stepped in a batch or alone.
    """

    def __init__(self, chain: KinematicChain, config: EnvConfig,
                 reward_config: RewardConfig, check_reach: bool = True):
        config.validate(chain)
        if check_reach:
            check_spawn_reachable(chain, config)
        self.chain = chain
        self.config = config
        self.reward_config = reward_config
        seqs = np.random.SeedSequence(config.seed).spawn(config.num_envs)
        self.rngs = [np.random.default_rng(s) for s in seqs]
        self.state = self._reset_all()

    def _reset_all(self) -> WorldState:
        states = [reset(self.chain, self.config, rng, n=1) for rng in self.rngs]
        return _concat_states(states)

    def reset_env(self, i: int) -> None:
        fresh = reset(self.chain, self.config, self.rngs[i], n=1)
        _write_env(self.state, i, fresh)

    def observe(self) -> np.ndarray:
        return build_observation(self.state, self.chain, self.config)

    def step(self, action: np.ndarray, auto_reset: bool = True) -> StepResult:
        self.state, result = step(self.state, action, self.chain,
                                  self.config, self.reward_config)
        if auto_reset:
            for i in np.flatnonzero(result.done):
                self.reset_env(int(i))
        return result


def _concat_states(states) -> WorldState:
    def cat(get):
        return np.concatenate([get(s) for s in states], axis=0)
    poses = BodyPoses(
        cat(lambda s: s.poses.positions), cat(lambda s: s.poses.quats),
        cat(lambda s: s.poses.tip_left), cat(lambda s: s.poses.tip_right))
    return WorldState(
        cat(lambda s: s.q), cat(lambda s: s.q_dot), cat(lambda s: s.targets),
        cat(lambda s: s.log_pos), cat(lambda s: s.log_quat),
        cat(lambda s: s.log_vel), cat(lambda s: s.attached),
        cat(lambda s: s.attach_pos), cat(lambda s: s.attach_quat),
        poses, cat(lambda s: s.prev_gb_pos), cat(lambda s: s.step_count))


def _write_env(state: WorldState, i: int, fresh: WorldState) -> None:
    for name in ("q", "q_dot", "targets", "log_pos", "log_quat", "log_vel",
                 "attached", "attach_pos", "attach_quat", "prev_gb_pos",
                 "step_count"):
        getattr(state, name)[i] = getattr(fresh, name)[0]
    state.poses.positions[i] = fresh.poses.positions[0]
    state.poses.quats[i] = fresh.poses.quats[0]
    state.poses.tip_left[i] = fresh.poses.tip_left[0]
    state.poses.tip_right[i] = fresh.poses.tip_right[0]
