"""Quaternion and rigid-transform helpers shared by tracking, simulation and LOD.

Quaternions use (w, x, y, z) component order throughout. Rotations map
body-frame vectors into the world frame: p_world = R @ p_body + t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_UNIT_TOL = 1e-9


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    q = q / n
    # canonical sign: w >= 0 keeps poses comparable across solves
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w,x,y,z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w,x,y,z) of a proper rotation matrix.

    Uses the Shepperd branch selection for numerical stability near any
    rotation angle.
    """
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dtype=np.float64,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in radians of a unit quaternion, accurate near zero."""
    w = abs(float(q[0]))
    v = float(np.linalg.norm(q[1:]))
    return 2.0 * math.atan2(v, w)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    h = angle / 2.0
    return quat_normalize(np.array([math.cos(h), *(math.sin(h) * axis)]))


def random_quat(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed unit quaternion (Shoemake subgroup algorithm)."""
    u1, u2, u3 = rng.random(3)
    a = math.sqrt(1.0 - u1)
    b = math.sqrt(u1)
    return quat_normalize(
        np.array(
            [
                a * math.sin(2 * math.pi * u2),
                a * math.cos(2 * math.pi * u2),
                b * math.sin(2 * math.pi * u3),
                b * math.cos(2 * math.pi * u3),
            ]
        )
    )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotation (unit quaternion, w,x,y,z) plus translation in meters."""

    translation: np.ndarray
    rotation: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.translation, other.translation)
            and np.array_equal(self.rotation, other.rotation)
        )

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(q)):
            raise ValueError("pose components must be finite")
        if abs(np.linalg.norm(q) - 1.0) > _UNIT_TOL:
            raise ValueError("rotation quaternion must be unit length within 1e-9")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.matrix().T + self.translation

    def inverse(self) -> "Pose":
        R = self.matrix()
        return Pose(-R.T @ self.translation, quat_conj(quat_normalize(self.rotation)))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: result maps p -> self(other(p))."""
        return Pose(
            self.matrix() @ other.translation + self.translation,
            quat_normalize(quat_mul(self.rotation, other.rotation)),
        )


def rotation_angle_between(qa: np.ndarray, qb: np.ndarray) -> float:
    """Geodesic angle in radians between two unit quaternions."""
    return quat_angle(quat_mul(qa, quat_conj(qb)))
