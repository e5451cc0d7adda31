import numpy as np
import pytest

from forwarder_rl.model import (
    ACTIVE_IDX,
    BedGeometry,
    BodySpec,
    JointSpec,
    KinematicChain,
    LimitViolationError,
    PRISMATIC,
    REVOLUTE,
    chain_from_config,
    chain_to_config,
    check_limits,
    clip_to_limits,
    forward_kinematics,
    load_default_model,
    resolve_passive_joints,
)
from forwarder_rl.transforms import quat_rotate, quat_to_matrix


def axis_angle_matrix(axis, angle):
    k = np.asarray(axis, dtype=float)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def fk_matrix_oracle(chain, q):
    """Independent FK via homogeneous 4x4 matrix composition."""
    T = [np.eye(4) for _ in range(10)]
    for i in range(1, 10):
        p = chain.parent_index[i]
        j = i - 1
        local = np.eye(4)
        local[:3, 3] = chain.offsets[i]
        if chain.joint_kinds[j] == PRISMATIC:
            local[:3, 3] = local[:3, 3] + np.asarray(chain.axes[j]) * q[j]
        else:
            local[:3, :3] = axis_angle_matrix(chain.axes[j], q[j])
        T[i] = T[p] @ local
    tips = []
    for body, off in ((8, chain.grapple_tip_offsets[0]),
                      (9, chain.grapple_tip_offsets[1])):
        tips.append(T[body][:3, :3] @ np.asarray(off) + T[body][:3, 3])
    return T, tips


def random_in_limit_q(chain, rng, n):
    return rng.uniform(chain.min_limits, chain.max_limits, size=(n, 9))


def test_fk_matches_matrix_oracle():
    chain = load_default_model()
    rng = np.random.default_rng(42)
    q = random_in_limit_q(chain, rng, 200)
    poses = forward_kinematics(chain, q)
    for k in range(q.shape[0]):
        T, tips = fk_matrix_oracle(chain, q[k])
        for i in range(10):
            assert np.max(np.abs(poses.positions[k, i] - T[i][:3, 3])) < 1e-9
            R = quat_to_matrix(poses.quats[k, i])
            assert np.max(np.abs(R - T[i][:3, :3])) < 1e-9
        assert np.max(np.abs(poses.tip_left[k] - tips[0])) < 1e-9
        assert np.max(np.abs(poses.tip_right[k] - tips[1])) < 1e-9


def test_fk_zero_pose_geometry():
    chain = load_default_model()
    poses = forward_kinematics(chain, np.zeros(9))
    # crane pivot above the manipulator base, arm horizontal along -x
    assert np.allclose(poses.positions[1], [1.8, 0.0, 1.0])
    assert np.allclose(poses.positions[2], [1.8, 0.0, 1.3])
    assert np.allclose(poses.positions[4], [1.8 - 3.8, 0.0, 1.3])
    # grapple assembly hangs 0.45 m below the extension point
    assert np.allclose(poses.p_gb, [-2.0, 0.0, 0.85])
    # tips hang symmetric about the grapple body
    assert np.allclose(poses.tip_left, [-2.0, 0.4, 0.25])
    assert np.allclose(poses.tip_right, [-2.0, -0.4, 0.25])


def test_prismatic_extends_radially():
    chain = load_default_model()
    q = np.zeros(9)
    q[3] = 1.5
    poses = forward_kinematics(chain, q)
    assert np.allclose(poses.p_gb, [-3.5, 0.0, 0.85])


def test_positive_j2_raises_arm():
    chain = load_default_model()
    q = np.zeros(9)
    q[1] = 0.3
    base = forward_kinematics(chain, np.zeros(9))
    poses = forward_kinematics(chain, resolve_passive_joints(chain, q))
    assert poses.p_gb[2] > base.p_gb[2]


def test_passive_joints_keep_grapple_hanging():
    chain = load_default_model()
    rng = np.random.default_rng(7)
    q = np.zeros((100, 9))
    # mild articulation so the passive correction stays inside j5/j6 limits
    q[:, 0] = rng.uniform(-1.0, 1.0, 100)
    q[:, 1] = rng.uniform(-0.4, 0.5, 100)
    q[:, 2] = rng.uniform(-0.4, 0.5, 100)
    q[:, 3] = rng.uniform(0.0, 1.5, 100)
    q = resolve_passive_joints(chain, q)
    poses = forward_kinematics(chain, q)
    hang = poses.p_gb - poses.positions[:, 5, :]  # hook origin -> grapple body
    assert np.allclose(hang[:, :2], 0.0, atol=1e-9)
    assert np.allclose(hang[:, 2], -0.45, atol=1e-9)


def test_resolve_passive_preserves_active_entries():
    chain = load_default_model()
    rng = np.random.default_rng(8)
    q = random_in_limit_q(chain, rng, 10)
    out = resolve_passive_joints(chain, q)
    assert np.array_equal(out[:, ACTIVE_IDX], q[:, ACTIVE_IDX])


def test_limits_clip_and_check():
    chain = load_default_model()
    q = np.full(9, 100.0)
    clipped = clip_to_limits(chain, q)
    assert np.array_equal(clipped, chain.max_limits)
    assert np.array_equal(clip_to_limits(chain, clipped), clipped)
    with pytest.raises(LimitViolationError):
        check_limits(chain, q)
    with pytest.raises(LimitViolationError):
        forward_kinematics(chain, q)
    check_limits(chain, clipped)


def test_joint_limit_table_radians():
    chain = load_default_model()
    deg = np.degrees
    assert np.allclose(deg(chain.min_limits[0]), -70)
    assert np.allclose(deg(chain.max_limits[0]), 70)
    assert np.allclose(deg([chain.min_limits[1], chain.max_limits[1]]), [-30, 40])
    assert chain.min_limits[3] == 0.0 and chain.max_limits[3] == 1.5
    assert np.allclose(deg([chain.min_limits[6], chain.max_limits[6]]), [0, 180])
    assert np.allclose(deg([chain.min_limits[7], chain.max_limits[7]]), [-45, 30])


def _default_parts():
    chain = load_default_model()
    return list(chain.bodies), list(chain.joints), chain.grapple_tip_offsets, chain.bed


def test_validation_rejects_wrong_body_count():
    bodies, joints, tips, bed = _default_parts()
    with pytest.raises(ValueError, match="10 bodies"):
        KinematicChain(bodies[:-1], joints, tips, bed)


def test_validation_rejects_second_prismatic():
    bodies, joints, tips, bed = _default_parts()
    j = joints[1]
    joints[1] = JointSpec(j.name, PRISMATIC, j.axis, 0.0, 1.0, j.active)
    with pytest.raises(ValueError, match="prismatic"):
        KinematicChain(bodies, joints, tips, bed)


def test_validation_rejects_wrong_active_set():
    bodies, joints, tips, bed = _default_parts()
    j = joints[4]  # j5 must stay passive
    joints[4] = JointSpec(j.name, j.kind, j.axis, j.min_limit, j.max_limit, True)
    with pytest.raises(ValueError, match="active joints"):
        KinematicChain(bodies, joints, tips, bed)


def test_validation_rejects_nonpositive_mass():
    bodies, joints, tips, bed = _default_parts()
    b = bodies[3]
    bodies[3] = BodySpec(b.name, 0.0, b.parent, b.local_offset)
    with pytest.raises(ValueError, match="mass"):
        KinematicChain(bodies, joints, tips, bed)


def test_bed_geometry_constraints():
    with pytest.raises(ValueError, match="above the bed top"):
        BedGeometry((0, 0, 1), (1, 1, 0.2), 1.0, (0, 0, 1.1), (0, 0, 1.2))
    with pytest.raises(ValueError, match="inside the bed box"):
        BedGeometry((0, 0, 1), (1, 1, 0.2), 1.0, (5, 0, 3.0), (5, 0, 1.2))
    with pytest.raises(ValueError, match="share x-y"):
        BedGeometry((0, 0, 1), (1, 1, 0.2), 1.0, (0.5, 0, 3.0), (0, 0, 1.2))


def test_geometry_overrides():
    chain = load_default_model({"crane_arm_length": 2.5})
    poses = forward_kinematics(chain, np.zeros(9))
    assert np.allclose(poses.p_gb, [-2.3, 0.0, 0.85])
    with pytest.raises(ValueError, match="unknown geometry"):
        load_default_model({"nope": 1.0})


def test_serialization_round_trip():
    chain = load_default_model()
    clone = chain_from_config(chain_to_config(chain))
    rng = np.random.default_rng(11)
    q = random_in_limit_q(chain, rng, 20)
    a = forward_kinematics(chain, q)
    b = forward_kinematics(clone, q)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.quats, b.quats)
    assert chain_to_config(clone) == chain_to_config(chain)


def test_unload_point_above_target():
    bed = load_default_model().bed
    assert bed.unload_point[2] > bed.target_point[2]
    assert bed.target_point[2] == bed.top_z
