"""Quaternion and rigid-transform helpers.

All functions broadcast over leading axes. Quaternions are stored
(w, x, y, z) and assumed unit-norm unless noted.
"""
from __future__ import annotations

import numpy as np


def quat_identity(shape=()) -> np.ndarray:
    q = np.zeros(shape + (4,))
    q[..., 0] = 1.0
    return q


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    """Unit quaternion rotating by `angle` (radians) about fixed unit `axis`."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    q = np.empty(angle.shape + (4,))
    q[..., 0] = np.cos(half)
    q[..., 1:] = np.sin(half)[..., None] * axis
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def quat_conj(q) -> np.ndarray:
    out = np.array(q, copy=True)
    out[..., 1:] *= -1.0
    return out


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q."""
    qv = q[..., 1:]
    qw = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + qw * t + np.cross(qv, t)


def quat_normalize(q) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix (stacked over leading axes)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def wrap_angle(a) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    return np.asarray(a) - 2.0 * np.pi * np.floor((np.asarray(a) + np.pi) / (2.0 * np.pi))


def point_segment_distance(p, a, b) -> np.ndarray:
    """Distance from point(s) p to segment(s) [a, b]; broadcasts leading axes."""
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-12)
    t = np.clip(np.sum((p - a) * ab, axis=-1) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)
