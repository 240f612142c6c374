"""SE(3) rigid-body math: positions, unit quaternions, and pose algebra.

Conventions used throughout the pipeline:

- positions are metres, stored as float64 arrays of shape (3,)
- orientations are unit quaternions [w, x, y, z], canonicalized so that
  w >= 0 (and on the w == 0 boundary, the first nonzero of x, y, z is
  positive), which makes pose equality directly testable
- a pose serializes to 7 reals [px, py, pz, qw, qx, qy, qz] in files

All values are immutable and all operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

QUAT_NORM_TOL = 1e-9


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector: {a}")
    a = a.copy()
    a.flags.writeable = False
    return a


def canonicalize_quat(q) -> np.ndarray:
    """Normalize [w,x,y,z] and fix the sign so equality is well defined."""
    a = np.asarray(q, dtype=np.float64).reshape(4)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite quaternion: {a}")
    n = np.linalg.norm(a)
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    a = a / n
    for c in a:
        if c > 0.0:
            break
        if c < 0.0:
            a = -a
            break
    a.flags.writeable = False
    return a


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    w, x, y, z = q
    u = np.array([x, y, z])
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    ax = np.asarray(axis, dtype=np.float64).reshape(3)
    n = np.linalg.norm(ax)
    if n < 1e-12:
        raise ValueError("zero axis")
    half = 0.5 * float(angle)
    s = math.sin(half) / n
    return canonicalize_quat([math.cos(half), ax[0] * s, ax[1] * s, ax[2] * s])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation-vector (axis * angle) log map; shortest representation."""
    w, x, y, z = q
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    sin_half = math.sqrt(x * x + y * y + z * z)
    if sin_half < 1e-12:
        return np.zeros(3)
    angle = 2.0 * math.atan2(sin_half, w)
    return np.array([x, y, z]) * (angle / sin_half)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Angular distance in radians between two unit quaternions."""
    d = min(1.0, abs(float(np.dot(a, b))))
    return 2.0 * math.acos(d)


def slerp(a: np.ndarray, b: np.ndarray, s: float) -> np.ndarray:
    """Spherical interpolation along the shortest arc.

    Antipodal inputs (180 deg apart) have no unique shortest arc; we then
    rotate deterministically about a fixed axis perpendicular to `a`
    (built from the x basis vector, falling back to y when degenerate).
    """
    dot = float(np.dot(a, b))
    bb = b
    if dot < 0.0:
        bb = -b
        dot = -dot
    if dot > 1.0 - 1e-12:
        return canonicalize_quat(a + s * (bb - a))
    if dot < 1e-9:
        # antipodal: pick the fixed perpendicular great circle through a
        axis = np.array([1.0, 0.0, 0.0])
        av = a[1:]
        if abs(float(np.dot(av, axis))) > 0.9 * float(np.linalg.norm(av) + 1e-12):
            axis = np.array([0.0, 1.0, 0.0])
        step = quat_from_axis_angle(axis, math.pi * s)
        return canonicalize_quat(quat_mul(step, a))
    theta = math.acos(min(1.0, dot))
    st = math.sin(theta)
    w1 = math.sin((1.0 - s) * theta) / st
    w2 = math.sin(s * theta) / st
    return canonicalize_quat(w1 * a + w2 * bb)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotate by `orientation`, then translate by `position`."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec3(self.position))
        object.__setattr__(self, "orientation", canonicalize_quat(self.orientation))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle: float, position=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(np.asarray(position, dtype=np.float64), quat_from_axis_angle(axis, angle))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def transform_point(self, p) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, np.asarray(p, dtype=np.float64))

    def to_list(self) -> list[float]:
        p, q = self.position, self.orientation
        return [float(p[0]), float(p[1]), float(p[2]), float(q[0]), float(q[1]), float(q[2]), float(q[3])]

    @staticmethod
    def from_list(vals) -> "Pose":
        vals = list(vals)
        if len(vals) != 7:
            raise ValueError(f"pose needs 7 reals, got {len(vals)}")
        return Pose(np.array(vals[:3], dtype=np.float64), np.array(vals[3:], dtype=np.float64))

    def approx_equal(self, other: "Pose", pos_tol: float = 1e-9, rot_tol: float = 1e-9) -> bool:
        return (
            float(np.linalg.norm(self.position - other.position)) <= pos_tol
            and quat_angle_between(self.orientation, other.orientation) <= rot_tol
        )


def compose(a: Pose, b: Pose) -> Pose:
    """Apply b, then a (result = a * b as transforms)."""
    return Pose(
        a.position + quat_rotate(a.orientation, b.position),
        quat_mul(a.orientation, b.orientation),
    )


def inverse(p: Pose) -> Pose:
    qi = quat_conj(p.orientation)
    return Pose(-quat_rotate(qi, p.position), qi)


def express_in_frame(world_pose: Pose, frame: Pose) -> Pose:
    """Pose of `world_pose` relative to `frame`: compose(frame, result) == world_pose."""
    return compose(inverse(frame), world_pose)


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    """Linear position / spherical orientation blend, s in [0, 1]."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter outside [0,1]: {s}")
    return Pose(
        (1.0 - s) * a.position + s * b.position,
        slerp(a.orientation, b.orientation, s),
    )
