"""Articulated forwarder definition, forward kinematics and joint utilities.

The machine is a 10-body open kinematic tree (base + 9 articulated bodies)
driven by 9 joints. Joint j4 is prismatic (boom extension); j5/j6 are
passive and resolved quasi-statically so the grapple assembly hangs
vertically. At zero articulation the crane points along world -x, over the
load bed; j1 slews the crane about the vertical axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .transforms import (
    quat_conj,
    quat_from_axis_angle,
    quat_identity,
    quat_mul,
    quat_rotate,
)

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

ACTIVE_JOINTS = ("j1", "j2", "j3", "j4", "j7", "j8", "j9")
ACTIVE_IDX = np.array([0, 1, 2, 3, 6, 7, 8])
PASSIVE_IDX = np.array([4, 5])  # j5, j6

GRAVITY = 9.81


class LimitViolationError(ValueError):
    """Raised when a joint vector is outside the model's limits."""


@dataclass(frozen=True)
class BodySpec:
    name: str
    mass: float
    parent: Optional[str]
    local_offset: tuple  # joint-frame position in the parent frame, meters


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str
    axis: tuple  # unit vector in the parent frame
    min_limit: float
    max_limit: float
    active: bool


@dataclass(frozen=True)
class BedGeometry:
    center: tuple
    half_extents: tuple
    guard_height: float
    unload_point: tuple  # p_unl
    target_point: tuple  # p_tgt

    def __post_init__(self):
        top = self.center[2] + self.half_extents[2]
        if not self.unload_point[2] > top:
            raise ValueError("unload point must be strictly above the bed top plane")
        c, h, t = np.array(self.center), np.array(self.half_extents), np.array(self.target_point)
        if np.any(np.abs(t - c) > h + 1e-12):
            raise ValueError("target point must lie inside the bed box")
        if abs(self.unload_point[0] - self.target_point[0]) > 1e-12 or \
           abs(self.unload_point[1] - self.target_point[1]) > 1e-12:
            raise ValueError("unload and target points must share x-y coordinates")

    @property
    def top_z(self) -> float:
        return self.center[2] + self.half_extents[2]

    @property
    def guard_top_z(self) -> float:
        return self.top_z + self.guard_height


class KinematicChain:
    """Immutable body/joint tables plus precomputed arrays for FK."""

    def __init__(self, bodies, joints, grapple_tip_offsets, bed: BedGeometry):
        self.bodies = tuple(bodies)
        self.joints = tuple(joints)
        self.grapple_tip_offsets = (
            tuple(grapple_tip_offsets[0]),
            tuple(grapple_tip_offsets[1]),
        )
        self.bed = bed
        self._validate()

        names = [b.name for b in self.bodies]
        self.body_index = {n: i for i, n in enumerate(names)}
        self.parent_index = np.array(
            [-1 if b.parent is None else self.body_index[b.parent] for b in self.bodies]
        )
        self.offsets = np.array([b.local_offset for b in self.bodies], dtype=float)
        self.axes = np.array([j.axis for j in self.joints], dtype=float)
        self.joint_kinds = [j.kind for j in self.joints]
        self.min_limits = np.array([j.min_limit for j in self.joints])
        self.max_limits = np.array([j.max_limit for j in self.joints])
        self.prismatic_mask = np.array([j.kind == PRISMATIC for j in self.joints])

    def _validate(self):
        if len(self.bodies) != 10:
            raise ValueError("chain must have 10 bodies")
        if len(self.joints) != 9:
            raise ValueError("chain must have 9 joints")
        roots = [b for b in self.bodies if b.parent is None]
        if len(roots) != 1 or roots[0].name != "base":
            raise ValueError("parent graph must be rooted at 'base'")
        names = {b.name for b in self.bodies}
        for b in self.bodies:
            if b.mass <= 0:
                raise ValueError(f"body {b.name}: mass must be positive")
            if b.parent is not None and b.parent not in names:
                raise ValueError(f"body {b.name}: unknown parent {b.parent}")
        # tree check: walking to the root must terminate without revisits
        by_name = {b.name: b for b in self.bodies}
        for b in self.bodies:
            seen = set()
            cur = b
            while cur.parent is not None:
                if cur.name in seen:
                    raise ValueError("cycle in parent graph")
                seen.add(cur.name)
                cur = by_name[cur.parent]
        for j in self.joints:
            if not j.min_limit < j.max_limit:
                raise ValueError(f"joint {j.name}: min_limit must be < max_limit")
        kinds = {j.name: j.kind for j in self.joints}
        if kinds["j4"] != PRISMATIC or any(
            k == PRISMATIC for n, k in kinds.items() if n != "j4"
        ):
            raise ValueError("j4 must be the only prismatic joint")
        active = tuple(j.name for j in self.joints if j.active)
        if active != ACTIVE_JOINTS:
            raise ValueError(f"active joints must be {ACTIVE_JOINTS}, got {active}")


@dataclass
class JointState:
    q: np.ndarray      # (..., 9)
    q_dot: np.ndarray  # (..., 9)


class BodyPoses:
    """World poses of all bodies plus grapple-tip convenience accessors."""

    GRAPPLE_BODY = 7
    GRAPPLE_LEFT = 8
    GRAPPLE_RIGHT = 9

    def __init__(self, positions, quats, tip_left, tip_right):
        self.positions = positions  # (..., 10, 3)
        self.quats = quats          # (..., 10, 4)
        self.tip_left = tip_left    # (..., 3)
        self.tip_right = tip_right  # (..., 3)

    @property
    def p_gb(self):
        return self.positions[..., self.GRAPPLE_BODY, :]

    @property
    def H_gb(self):
        return self.quats[..., self.GRAPPLE_BODY, :]

    @property
    def p_gl(self):
        return self.tip_left

    @property
    def p_gr(self):
        return self.tip_right


# ---------------------------------------------------------------------------
# Default model. Joint limits and masses follow the machine's published
# tables; link geometry defaults are calibration stand-ins and are fully
# config-overridable.
# ---------------------------------------------------------------------------

DEFAULT_GEOMETRY = {
    "manipulator_base_offset": (1.8, 0.0, 1.0),
    "crane_pivot_height": 0.3,
    "crane_arm_length": 2.2,
    "extension_arm_length": 1.6,
    "hook_drop": 0.25,
    "rotator_drop": 0.2,
    "tip_lateral": 0.4,
    "tip_drop": 0.6,
    "bed_center": (-1.5, 0.0, 1.0),
    "bed_half_extents": (1.8, 1.0, 0.15),
    "bed_guard_height": 1.0,
}

_MASSES = {
    "base": 1500.0,
    "manipulator_base": 158.0,
    "crane_arm": 171.0,
    "extension_arm": 132.0,
    "extension": 75.0,
    "intermediate_hook": 16.0,
    "grapple_rotator": 12.0,
    "grapple_body": 50.0,
    "grapple_left": 40.0,
    "grapple_right": 40.0,
}

_D = math.pi / 180.0

_JOINT_TABLE = [
    # name, kind, axis, min, max
    ("j1", REVOLUTE, (0, 0, 1), -70 * _D, 70 * _D),
    ("j2", REVOLUTE, (0, 1, 0), -30 * _D, 40 * _D),
    ("j3", REVOLUTE, (0, 1, 0), -30 * _D, 40 * _D),
    ("j4", PRISMATIC, (-1, 0, 0), 0.0, 1.5),
    ("j5", REVOLUTE, (0, 1, 0), -90 * _D, 120 * _D),
    ("j6", REVOLUTE, (1, 0, 0), -90 * _D, 90 * _D),
    ("j7", REVOLUTE, (0, 0, 1), 0.0, 180 * _D),
    ("j8", REVOLUTE, (-1, 0, 0), -45 * _D, 30 * _D),
    ("j9", REVOLUTE, (1, 0, 0), -45 * _D, 30 * _D),
]


def load_default_model(geometry_overrides: Optional[dict] = None) -> KinematicChain:
    geo = dict(DEFAULT_GEOMETRY)
    if geometry_overrides:
        unknown = set(geometry_overrides) - set(geo)
        if unknown:
            raise ValueError(f"unknown geometry keys: {sorted(unknown)}")
        geo.update(geometry_overrides)

    bodies = [
        BodySpec("base", _MASSES["base"], None, (0.0, 0.0, 0.0)),
        BodySpec("manipulator_base", _MASSES["manipulator_base"], "base",
                 tuple(geo["manipulator_base_offset"])),
        BodySpec("crane_arm", _MASSES["crane_arm"], "manipulator_base",
                 (0.0, 0.0, geo["crane_pivot_height"])),
        BodySpec("extension_arm", _MASSES["extension_arm"], "crane_arm",
                 (-geo["crane_arm_length"], 0.0, 0.0)),
        BodySpec("extension", _MASSES["extension"], "extension_arm",
                 (-geo["extension_arm_length"], 0.0, 0.0)),
        BodySpec("intermediate_hook", _MASSES["intermediate_hook"], "extension",
                 (0.0, 0.0, 0.0)),
        BodySpec("grapple_rotator", _MASSES["grapple_rotator"], "intermediate_hook",
                 (0.0, 0.0, -geo["hook_drop"])),
        BodySpec("grapple_body", _MASSES["grapple_body"], "grapple_rotator",
                 (0.0, 0.0, -geo["rotator_drop"])),
        BodySpec("grapple_left", _MASSES["grapple_left"], "grapple_body",
                 (0.0, 0.0, 0.0)),
        BodySpec("grapple_right", _MASSES["grapple_right"], "grapple_body",
                 (0.0, 0.0, 0.0)),
    ]
    joints = [
        JointSpec(name, kind, axis, lo, hi, active=name in ACTIVE_JOINTS)
        for name, kind, axis, lo, hi in _JOINT_TABLE
    ]
    tip_offsets = (
        (0.0, geo["tip_lateral"], -geo["tip_drop"]),
        (0.0, -geo["tip_lateral"], -geo["tip_drop"]),
    )
    center = tuple(geo["bed_center"])
    bed = BedGeometry(
        center=center,
        half_extents=tuple(geo["bed_half_extents"]),
        guard_height=geo["bed_guard_height"],
        unload_point=(center[0], center[1],
                      center[2] + geo["bed_half_extents"][2] + geo["bed_guard_height"] + 0.5),
        target_point=(center[0], center[1], center[2] + geo["bed_half_extents"][2]),
    )
    return KinematicChain(bodies, joints, tip_offsets, bed)


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------

def clip_to_limits(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    return np.clip(q, chain.min_limits, chain.max_limits)


def check_limits(chain: KinematicChain, q: np.ndarray, tol: float = 1e-9):
    if np.any(q < chain.min_limits - tol) or np.any(q > chain.max_limits + tol):
        raise LimitViolationError("joint vector outside model limits")


def forward_kinematics(chain: KinematicChain, q: np.ndarray,
                       check: bool = True) -> BodyPoses:
    """World poses of all bodies for joint vector(s) q of shape (..., 9)."""
    q = np.asarray(q, dtype=float)
    if check:
        check_limits(chain, q)
    batch = q.shape[:-1]
    positions = np.zeros(batch + (10, 3))
    quats = quat_identity(batch + (10,))

    for i in range(1, 10):
        p = chain.parent_index[i]
        j = i - 1  # joint j connects body i to its parent
        pos = positions[..., p, :] + quat_rotate(quats[..., p, :], chain.offsets[i])
        rot = quats[..., p, :]
        qi = q[..., j]
        if chain.joint_kinds[j] == PRISMATIC:
            pos = pos + quat_rotate(rot, chain.axes[j] * qi[..., None])
        else:
            rot = quat_mul(rot, quat_from_axis_angle(chain.axes[j], qi))
        positions[..., i, :] = pos
        quats[..., i, :] = rot

    tip_l = positions[..., 8, :] + quat_rotate(
        quats[..., 8, :], np.array(chain.grapple_tip_offsets[0]))
    tip_r = positions[..., 9, :] + quat_rotate(
        quats[..., 9, :], np.array(chain.grapple_tip_offsets[1]))
    return BodyPoses(positions, quats, tip_l, tip_r)


def resolve_passive_joints(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """Set j5/j6 so the grapple assembly hangs vertically (limits permitting).

    Active joint entries are returned unchanged. The hang is quasi-static:
    gravity expressed in the extension frame is matched by a pitch (j5, about
    local y) followed by a roll (j6, about local x).
    """
    q = np.array(q, dtype=float, copy=True)
    batch = q.shape[:-1]
    # FK of bodies 1..4 (joints j1..j4) to get the extension orientation.
    rot = quat_identity(batch)
    for j in range(4):
        if chain.joint_kinds[j] == PRISMATIC:
            continue
        rot = quat_mul(rot, quat_from_axis_angle(chain.axes[j], q[..., j]))
    # gravity direction in the extension frame
    g_local = quat_rotate(quat_conj(rot), np.array([0.0, 0.0, -1.0]))
    gx, gy, gz = g_local[..., 0], g_local[..., 1], g_local[..., 2]
    # R_y(j5) R_x(j6) (0,0,-1) = (-cos(j6) sin(j5), sin(j6), -cos(j6) cos(j5))
    j5 = np.arctan2(-gx, -gz)
    j6 = np.arcsin(np.clip(gy, -1.0, 1.0))
    q[..., 4] = np.clip(j5, chain.min_limits[4], chain.max_limits[4])
    q[..., 5] = np.clip(j6, chain.min_limits[5], chain.max_limits[5])
    return q


# ---------------------------------------------------------------------------
# Serialization (human-readable key-value config)
# ---------------------------------------------------------------------------

def chain_to_config(chain: KinematicChain) -> dict:
    return {
        "bodies": [
            {"name": b.name, "mass": b.mass, "parent": b.parent,
             "local_offset": list(b.local_offset)}
            for b in chain.bodies
        ],
        "joints": [
            {"name": j.name, "kind": j.kind, "axis": list(j.axis),
             "min_limit": j.min_limit, "max_limit": j.max_limit,
             "active": j.active}
            for j in chain.joints
        ],
        "geometry": {
            "grapple_tip_offsets": [list(t) for t in chain.grapple_tip_offsets],
            "bed": {
                "center": list(chain.bed.center),
                "half_extents": list(chain.bed.half_extents),
                "guard_height": chain.bed.guard_height,
                "unload_point": list(chain.bed.unload_point),
                "target_point": list(chain.bed.target_point),
            },
        },
    }


def chain_from_config(cfg: dict) -> KinematicChain:
    bodies = [
        BodySpec(b["name"], float(b["mass"]), b["parent"], tuple(b["local_offset"]))
        for b in cfg["bodies"]
    ]
    joints = [
        JointSpec(j["name"], j["kind"], tuple(j["axis"]),
                  float(j["min_limit"]), float(j["max_limit"]), bool(j["active"]))
        for j in cfg["joints"]
    ]
    geo = cfg["geometry"]
    bed = geo["bed"]
    return KinematicChain(
        bodies, joints,
        tuple(tuple(t) for t in geo["grapple_tip_offsets"]),
        BedGeometry(tuple(bed["center"]), tuple(bed["half_extents"]),
                    float(bed["guard_height"]), tuple(bed["unload_point"]),
                    tuple(bed["target_point"])),
    )
