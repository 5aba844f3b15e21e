"""Rigid-body geometry: unit quaternions, rotation matrices, poses, ZYX Euler angles.

Conventions (used everywhere in this package):
  - quaternions are scalar-first (w, x, y, z), Hamilton product;
  - rotation matrices are 3x3, right-handed, acting on column vectors;
  - a Pose (p, q) maps local coordinates v to parent coordinates R(q) @ v + p;
  - angles are radians; degrees appear only at reporting boundaries.

All types are immutable values and all operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_NORM_TOL = 1e-12
_ORTHO_TOL = 1e-6


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion (w, x, y, z), scalar first.

    Construction renormalizes whenever the input has drifted off unit norm,
    so the unit invariant holds after every operation. Both q and -q map to
    the same rotation matrix; `canonical()` picks a deterministic sign.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        norm = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if norm < _NORM_TOL:
            raise ValueError("quaternion norm too small to normalize")
        scale = 1.0 / norm if abs(norm - 1.0) > _NORM_TOL else 1.0
        object.__setattr__(self, "w", float(self.w) * scale)
        object.__setattr__(self, "x", float(self.x) * scale)
        object.__setattr__(self, "y", float(self.y) * scale)
        object.__setattr__(self, "z", float(self.z) * scale)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_array(q: np.ndarray) -> "UnitQuaternion":
        return UnitQuaternion(float(q[0]), float(q[1]), float(q[2]), float(q[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def negate(self) -> "UnitQuaternion":
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)

    def canonical(self) -> "UnitQuaternion":
        """Deterministic sign: w > 0, or first nonzero component > 0 when w == 0."""
        for component in (self.w, self.x, self.y, self.z):
            if component > 0.0:
                return self
            if component < 0.0:
                return self.negate()
        return self


def quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product a * b (apply b first, then a)."""
    return UnitQuaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def quat_to_matrix(q: UnitQuaternion) -> np.ndarray:
    """Rotation matrix of q; identical for q and -q."""
    w, x, y, z = q.w, q.x, q.y, q.z
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def is_rotation_matrix(matrix: np.ndarray, tol: float = _ORTHO_TOL) -> bool:
    """True when matrix is 3x3, orthonormal within tol, and det = +1 within tol."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (3, 3):
        return False
    if not np.allclose(matrix.T @ matrix, np.eye(3), atol=tol):
        return False
    return abs(float(np.linalg.det(matrix)) - 1.0) <= tol


def matrix_to_quat(matrix: np.ndarray) -> UnitQuaternion:
    """Quaternion of a rotation matrix, canonical sign.

    Uses the Shepperd-style branch on the largest of trace / diagonal
    elements, which stays well-conditioned near 180 degree rotations.
    Raises ValueError when the input fails orthonormality by more than 1e-6.
    """
    R = np.asarray(matrix, dtype=float)
    if not is_rotation_matrix(R):
        raise ValueError("matrix is not a rotation: orthonormality/det check failed")

    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > max(R[0, 0], R[1, 1], R[2, 2]):
        s = math.sqrt(trace + 1.0) * 2.0
        q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    return UnitQuaternion(*q).canonical()


def rotate_vector(q: UnitQuaternion, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by q (equivalent to quat_to_matrix(q) @ v)."""
    w, x, y, z = q.w, q.x, q.y, q.z
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    # v + w * (2 u x v) + u x (2 u x v), expanded to avoid np.cross overhead
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.array(
        [
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        ]
    )


@dataclass(frozen=True)
class Pose:
    """SE(3) element: position [m] plus orientation quaternion."""

    position: np.ndarray
    orientation: UnitQuaternion

    def __post_init__(self) -> None:
        p = np.array(self.position, dtype=float).reshape(3)
        p.setflags(write=False)
        object.__setattr__(self, "position", p)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), UnitQuaternion.identity())


def compose(a: Pose, b: Pose) -> Pose:
    """Chain rigid transforms: (a o b) maps b-local coordinates through a."""
    return Pose(
        a.position + rotate_vector(a.orientation, b.position),
        quat_multiply(a.orientation, b.orientation),
    )


def inverse(p: Pose) -> Pose:
    q_inv = p.orientation.conjugate()
    return Pose(-rotate_vector(q_inv, p.position), q_inv)


def quat_rotation_angle(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Angle [rad] of the relative rotation between a and b, in [0, pi].

    atan2 formulation: accurate to machine precision near both 0 and pi,
    unlike the arccos-of-trace form.
    """
    rel = quat_multiply(a, b.conjugate())
    vec_norm = math.sqrt(rel.x**2 + rel.y**2 + rel.z**2)
    return 2.0 * math.atan2(vec_norm, abs(rel.w))


def riemannian_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic distance on SO(3): the rotation angle of a @ b.T, in [0, pi]."""
    rel = np.asarray(a, dtype=float) @ np.asarray(b, dtype=float).T
    cos_term = (np.trace(rel) - 1.0) / 2.0
    skew = 0.5 * np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    sin_term = float(np.linalg.norm(skew))
    return math.atan2(sin_term, float(cos_term))


def quat_l2_distance(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Sign-invariant quaternion metric: min(|a - b|, |a + b|)."""
    av, bv = a.as_array(), b.as_array()
    return float(min(np.linalg.norm(av - bv), np.linalg.norm(av + bv)))


def chordal_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius-norm distance between two rotation matrices."""
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


@dataclass(frozen=True)
class EulerZYX:
    """ZYX (yaw-pitch-roll) Euler angles, each wrapped to (-pi, pi]."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "roll", wrap_angle(self.roll))
        object.__setattr__(self, "pitch", wrap_angle(self.pitch))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


def euler_zyx_to_matrix(e: EulerZYX) -> np.ndarray:
    """R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(e.roll), math.sin(e.roll)
    cp, sp = math.cos(e.pitch), math.sin(e.pitch)
    cy, sy = math.cos(e.yaw), math.sin(e.yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def matrix_to_euler_zyx(matrix: np.ndarray) -> EulerZYX:
    """Extract ZYX angles; at gimbal lock (|pitch| = pi/2) roll is set to 0."""
    R = np.asarray(matrix, dtype=float)
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, float(sp)))
    pitch = math.asin(sp)
    if abs(math.cos(pitch)) > 1e-9:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    else:
        roll = 0.0
        yaw = math.atan2(-R[0, 1], R[1, 1])
    return EulerZYX(roll, pitch, yaw)


def quat_from_yaw(yaw: float) -> UnitQuaternion:
    """Quaternion of a pure z-axis rotation."""
    half = 0.5 * yaw
    return UnitQuaternion(math.cos(half), 0.0, 0.0, math.sin(half))
