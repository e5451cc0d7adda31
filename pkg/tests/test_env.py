import copy

import numpy as np
import pytest

from forwarder_rl.config import EnvConfig, RewardConfig
from forwarder_rl.configfile import ConfigError
from forwarder_rl.env import (
    OBS_DIM,
    ForwarderEnv,
    WorldState,
    _concat_states,
    apply_action,
    build_observation,
    check_spawn_reachable,
    grasp_check,
    release_check,
    reset,
    release_check,
    step,
    support_z,
    terrain_height,
)
from forwarder_rl.model import ACTIVE_IDX, forward_kinematics, load_default_model, resolve_passive_joints

CHAIN = load_default_model()


def make_state(n=1, seed=0, config=None):
    config = config or EnvConfig()
    rng = np.random.default_rng(seed)
    return reset(CHAIN, config, rng, n=n)


def test_reset_deterministic():
    a = make_state(n=4, seed=5)
    b = make_state(n=4, seed=5)
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.log_pos, b.log_pos)
    assert np.array_equal(a.log_quat, b.log_quat)


def test_reset_respects_ranges():
    cfg = EnvConfig()
    state = make_state(n=200, config=cfg)
    ranges = np.asarray(cfg.joint_init_ranges)
    qa = state.q[:, ACTIVE_IDX]
    assert np.all(qa >= ranges[:, 0] - 1e-12)
    assert np.all(qa <= ranges[:, 1] + 1e-12)
    xmin, xmax, ymin, ymax = cfg.log_spawn_region[:4]
    assert np.all((state.log_pos[:, 0] >= xmin) & (state.log_pos[:, 0] <= xmax))
    assert np.all((state.log_pos[:, 1] >= ymin) & (state.log_pos[:, 1] <= ymax))
    # logs rest on the support surface, detached and still
    assert np.allclose(state.log_pos[:, 2], cfg.log_radius)
    assert not state.attached.any()
    assert np.all(state.log_vel == 0.0)


def test_apply_action_arithmetic():
    cfg = EnvConfig(action_scale=[0.6, 0.4, 0.4, 0.4, 1.2, 1.2, 1.2])
    q = np.zeros((1, 9))
    q[0, 3] = 0.5
    action = np.zeros((1, 7))
    action[0, 3] = 1.0
    U = apply_action(CHAIN, cfg, q, action)
    # U = q + A * c * dt = 0.5 + 1 * 0.4 * 0.05
    assert np.isclose(U[0, 3], 0.52)
    assert np.allclose(U[0, [0, 1, 2, 6, 7, 8]], 0.0)


def test_apply_action_clamps_action_and_limits():
    cfg = EnvConfig()
    q = np.zeros((1, 9))
    q[0, 3] = 1.499
    action = np.full((1, 7), 50.0)  # clamped to +1 before scaling
    U = apply_action(CHAIN, cfg, q, action)
    assert U[0, 3] == 1.5  # limit clip
    assert np.isclose(U[0, 0], 0.6 * 0.05)


def test_rate_limited_tracking():
    cfg = EnvConfig(max_joint_speed=[0.1] * 9)
    state = make_state(config=cfg)
    q0 = state.q.copy()
    action = np.ones((1, 7))
    new_state, _ = step(state, action, CHAIN, cfg, RewardConfig())
    dq = new_state.q[:, ACTIVE_IDX] - q0[:, ACTIVE_IDX]
    assert np.all(np.abs(dq) <= 0.1 * cfg.dt + 1e-12)
    assert np.allclose(new_state.q_dot[:, ACTIVE_IDX], dq / cfg.dt)


def test_ballistic_fall_exact():
    cfg = EnvConfig()
    state = make_state(config=cfg)
    state.log_pos[0] = [0.0, 5.0, 3.0]
    state.log_vel[0] = [0.0, 0.0, 0.0]
    new_state, _ = step(state, np.zeros((1, 7)), CHAIN, cfg, RewardConfig())
    dt = cfg.dt
    assert np.isclose(new_state.log_pos[0, 2], 3.0 - 0.5 * 9.81 * dt * dt)
    assert np.isclose(3.0 - new_state.log_pos[0, 2], 0.0122625)
    assert np.isclose(new_state.log_vel[0, 2], -9.81 * dt)


def test_landing_clamps_to_support_and_stops():
    cfg = EnvConfig()
    state = make_state(config=cfg)
    state.log_pos[0] = [0.0, 5.0, cfg.log_radius + 0.001]
    state.log_vel[0] = [0.3, 0.0, -1.0]
    new_state, _ = step(state, np.zeros((1, 7)), CHAIN, cfg, RewardConfig())
    assert new_state.log_pos[0, 2] == cfg.log_radius
    assert np.all(new_state.log_vel[0] == 0.0)


def test_guard_wall_blocks_horizontal_entry():
    cfg = EnvConfig()
    state = make_state(config=cfg)
    bed = CHAIN.bed
    # just outside the bed footprint, moving in, below the guard top
    state.log_pos[0] = [bed.center[0] + bed.half_extents[0] + 0.01, 0.0, 0.5]
    state.log_vel[0] = [-5.0, 0.0, 0.0]
    new_state, _ = step(state, np.zeros((1, 7)), CHAIN, cfg, RewardConfig())
    assert new_state.log_pos[0, 0] == state.log_pos[0, 0]
    assert new_state.log_vel[0, 0] == 0.0


def test_log_above_guard_can_cross():
    cfg = EnvConfig()
    state = make_state(config=cfg)
    bed = CHAIN.bed
    x0 = bed.center[0] + bed.half_extents[0] + 0.01
    state.log_pos[0] = [x0, 0.0, bed.guard_top_z + cfg.log_radius + 0.5]
    state.log_vel[0] = [-5.0, 0.0, 0.0]
    new_state, _ = step(state, np.zeros((1, 7)), CHAIN, cfg, RewardConfig())
    assert new_state.log_pos[0, 0] < x0


def test_support_height_on_bed():
    cfg = EnvConfig()
    xy = np.array([[CHAIN.bed.center[0], CHAIN.bed.center[1]], [10.0, 10.0]])
    z = support_z(CHAIN, cfg, xy)
    assert np.isclose(z[0], CHAIN.bed.top_z + cfg.log_radius)
    assert np.isclose(z[1], cfg.log_radius)


def test_terrain_kinds():
    flat = EnvConfig()
    elev = EnvConfig(terrain_kind="elevated", terrain_height=0.7)
    rough = EnvConfig(terrain_kind="rough", terrain_amplitude=0.2, terrain_seed=3)
    xy = np.random.default_rng(0).uniform(-8, 8, size=(100, 2))
    assert np.all(terrain_height(flat, xy) == 0.0)
    assert np.all(terrain_height(elev, xy) == 0.7)
    h = terrain_height(rough, xy)
    assert np.all((h >= 0.0) & (h <= 0.2))
    assert h.std() > 0.0
    assert np.array_equal(h, terrain_height(rough, xy))  # deterministic


def _attach(state, chain):
    """Force an attachment with the log at its current pose."""
    from forwarder_rl.transforms import quat_conj, quat_mul, quat_rotate
    gb_q = state.poses.H_gb
    inv = quat_conj(gb_q)
    state.attach_pos[:] = quat_rotate(inv, state.log_pos - state.poses.p_gb)
    state.attach_quat[:] = quat_mul(inv, state.log_quat)
    state.attached[:] = True
    # jaws shut so the attachment is not immediately released
    state.q[:, 7] = 0.3
    state.q[:, 8] = 0.3


def test_attached_log_moves_rigidly():
    cfg = EnvConfig()
    rng = np.random.default_rng(1)
    state = make_state(config=cfg, seed=1)
    _attach(state, CHAIN)
    from forwarder_rl.transforms import quat_conj, quat_mul, quat_rotate
    for _ in range(30):
        action = rng.uniform(-1, 1, size=(1, 7))
        action[0, 5:] = 1.0  # keep jaws shut
        state, res = step(state, action, CHAIN, cfg, RewardConfig())
        assert state.attached[0]
        rel = quat_rotate(quat_conj(state.poses.H_gb),
                          state.log_pos - state.poses.p_gb)
        assert np.max(np.abs(rel - state.attach_pos)) < 1e-9


def test_release_detaches_and_log_falls():
    cfg = EnvConfig()
    state = make_state(config=cfg, seed=2)
    state.log_pos[0] = state.poses.p_gb[0] + [0.0, 0.0, -0.7]
    _attach(state, CHAIN)
    action = np.zeros((1, 7))
    action[0, 5:] = -1.0  # open the jaws
    for _ in range(20):
        state, res = step(state, action, CHAIN, cfg, RewardConfig())
        if not state.attached[0]:
            break
    assert not state.attached[0]
    z0 = state.log_pos[0, 2]
    state, _ = step(state, np.zeros((1, 7)), CHAIN, cfg, RewardConfig())
    assert state.log_pos[0, 2] < z0


def test_grasp_check_geometry():
    cfg = EnvConfig()
    state = make_state(config=cfg)
    q = np.zeros((1, 9))
    q[0, 7] = q[0, 8] = 0.436  # jaws ~25 deg shut; tips near the log axis
    q = resolve_passive_joints(CHAIN, q)
    state.q = q
    state.poses = forward_kinematics(CHAIN, q)
    state.log_pos[0] = [-2.0, 0.0, 0.15]  # directly under the grapple body
    state.log_quat[0] = [1.0, 0.0, 0.0, 0.0]
    assert grasp_check(state, CHAIN, cfg)[0]
    # jaws open: no grasp, and an attached state would release
    state.q[0, 7] = state.q[0, 8] = -0.2
    state.poses = forward_kinematics(CHAIN, state.q)
    assert not grasp_check(state, CHAIN, cfg)[0]
    assert release_check(state, cfg)[0]
    # log shifted sideways out of the jaw gap: no straddle
    state.q[0, 7] = state.q[0, 8] = 0.436
    state.poses = forward_kinematics(CHAIN, state.q)
    state.log_pos[0] = [-2.0, 0.3, 0.15]
    assert not grasp_check(state, CHAIN, cfg)[0]
    # log far below the tips: outside the capture radius
    state.log_pos[0] = [-2.0, 0.0, -0.5]
    assert not grasp_check(state, CHAIN, cfg)[0]


def test_observation_layout():
    cfg = EnvConfig()
    env = ForwarderEnv(CHAIN, cfg, RewardConfig())
    obs = env.observe()
    assert obs.shape == (cfg.num_envs, OBS_DIM)
    state = env.state
    assert np.array_equal(obs[:, :7], state.q[:, ACTIVE_IDX])
    assert np.array_equal(obs[:, 14:17], state.poses.p_gb)
    assert np.array_equal(obs[:, 17:21], state.poses.H_gb)
    assert np.array_equal(obs[:, 24:27], state.poses.tip_left)
    assert np.array_equal(obs[:, 30:33], state.log_pos)
    p_unl = np.array(CHAIN.bed.unload_point)
    p_tgt = np.array(CHAIN.bed.target_point)
    assert np.allclose(obs[:, 37:40], p_unl)
    assert np.allclose(obs[:, 40:43], p_tgt)
    assert np.allclose(obs[:, 43:46], state.poses.p_gb - state.log_pos)
    assert np.allclose(obs[:, 46:49], state.log_pos - p_unl)
    assert np.allclose(obs[:, 49:52], state.log_pos - p_tgt)
    assert np.all((obs[:, 52] > 0.0) & (obs[:, 52] <= 1.0))


def test_vectorized_step_equals_individual_steps():
    cfg = EnvConfig()
    states = [make_state(seed=s) for s in range(4)]
    batch = _concat_states(states)
    rng = np.random.default_rng(9)
    actions = rng.uniform(-1, 1, size=(4, 7))
    new_batch, res_batch = step(batch, actions, CHAIN, cfg, RewardConfig())
    for i, s in enumerate(states):
        new_s, res_s = step(s, actions[i:i + 1], CHAIN, cfg, RewardConfig())
        assert np.allclose(new_batch.q[i], new_s.q[0], atol=1e-14)
        assert np.allclose(new_batch.log_pos[i], new_s.log_pos[0], atol=1e-14)
        assert np.allclose(res_batch.observation[i], res_s.observation[0],
                           atol=1e-14)


def test_env_auto_reset_and_termination():
    cfg = EnvConfig(episode_length=3, num_envs=2, seed=1)
    env = ForwarderEnv(CHAIN, cfg, RewardConfig())
    for t in range(3):
        res = env.step(np.zeros((2, 7)))
    assert res.done.all()
    # auto-reset rewound the step counters
    assert np.all(env.state.step_count == 0)


def test_success_requires_settled_log_at_target():
    cfg = EnvConfig()
    state = make_state(config=cfg)
    state.log_pos[0] = np.array(CHAIN.bed.target_point) + [0.0, 0.0, 0.1]
    state.log_vel[0] = [0.0, 0.0, 0.0]
    from forwarder_rl.env import success_check
    assert success_check(state, CHAIN, cfg)[0]
    state.log_vel[0] = [0.0, 0.0, -1.0]
    assert not success_check(state, CHAIN, cfg)[0]
    state.log_vel[0] = [0.0, 0.0, 0.0]
    state.log_pos[0] = np.array(CHAIN.bed.target_point) + [1.0, 0.0, 0.0]
    assert not success_check(state, CHAIN, cfg)[0]
    # strict mode also demands the jaws have let go
    strict = EnvConfig(require_release=True)
    state.log_pos[0] = np.array(CHAIN.bed.target_point)
    state.attached[0] = True
    assert not success_check(state, CHAIN, strict)[0]
    state.attached[0] = False
    assert success_check(state, CHAIN, strict)[0]


def test_spawn_reach_check_rejects_bad_region():
    cfg = EnvConfig()
    check_spawn_reachable(CHAIN, cfg)  # default region passes
    far = EnvConfig(log_spawn_region=[20.0, 21.0, 20.0, 21.0, 0.0, 3.14])
    with pytest.raises(ValueError, match="reach"):
        check_spawn_reachable(CHAIN, far)
    behind = EnvConfig(log_spawn_region=[4.0, 5.0, -0.5, 0.5, 0.0, 3.14])
    with pytest.raises(ValueError):
        check_spawn_reachable(CHAIN, behind)


def test_config_validation_names_field():
    with pytest.raises(ConfigError, match="env.dt"):
        EnvConfig(dt=0.0).validate()
    with pytest.raises(ConfigError, match="env.action_scale"):
        EnvConfig(action_scale=[1.0]).validate()
    with pytest.raises(ConfigError, match="env.joint_init_ranges"):
        EnvConfig(joint_init_ranges=[[-100, 100]] * 7).validate(CHAIN)


def test_limit_fuzz_small():
    cfg = EnvConfig(num_envs=16, seed=4)
    env = ForwarderEnv(CHAIN, cfg, RewardConfig())
    rng = np.random.default_rng(0)
    for _ in range(100):
        env.step(rng.uniform(-3, 3, size=(16, 7)))
        assert np.all(env.state.q >= CHAIN.min_limits)
        assert np.all(env.state.q <= CHAIN.max_limits)
