"""Rigid-body pose algebra.

Poses are stored as a translation (meters) plus a unit quaternion in
(w, x, y, z) order.  Every constructed pose is renormalized and put in the
canonical hemisphere (w >= 0, ties broken on the first nonzero component),
so two poses describing the same transform compare equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS = 1e-12


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.asarray(a, dtype=float).tolist()
    bw, bx, by, bz = np.asarray(b, dtype=float).tolist()
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(sum(c * c for c in q.tolist()))
    if n < EPS:
        raise ValueError("zero-norm quaternion")
    return _sign_canonical(q / n)


def _sign_canonical(q: np.ndarray) -> np.ndarray:
    for c in q.tolist():
        if c > 0.0:
            break
        if c < 0.0:
            q = -q
            break
    return q + 0.0  # flush -0.0


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float).tolist()
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; picks the largest diagonal term for stability."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return canonical_quat(np.array(q))


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < EPS or angle == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    h = 0.5 * angle
    return np.concatenate(([math.cos(h)], math.sin(h) * axis))


def rotvec_to_quat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = math.sqrt(float(v @ v))
    if angle < EPS:
        # first-order expansion keeps tiny rotations differentiable
        return canonical_quat(np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]]))
    return canonical_quat(axis_angle_quat(v / angle, angle))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = canonical_quat(q)
    w = min(1.0, q[0])
    s = math.sqrt(max(0.0, 1.0 - w * w))
    angle = 2.0 * math.atan2(s, w)
    if s < 1e-9:
        return 2.0 * q[1:]
    return q[1:] / s * angle


def rotvec_to_matrix(v) -> np.ndarray:
    return quat_to_matrix(rotvec_to_quat(v))


def matrix_to_rotvec(m: np.ndarray) -> np.ndarray:
    return quat_to_rotvec(matrix_to_quat(m))


@dataclass(frozen=True, eq=False)
class Pose:
    translation: np.ndarray
    rotation: np.ndarray  # (w, x, y, z)

    def __init__(self, translation=(0.0, 0.0, 0.0), rotation=(1.0, 0.0, 0.0, 0.0)):
        t = np.array(translation, dtype=float).reshape(3)
        q = canonical_quat(np.array(rotation, dtype=float).reshape(4))
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(translation, rotvec_to_quat(rotvec))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(translation, axis_angle_quat(axis, angle))

    @classmethod
    def from_list(cls, values, *, norm_tol: float = 1e-6) -> "Pose":
        """Parse the 7-number form [tx, ty, tz, qw, qx, qy, qz].

        Unlike the constructor this refuses quaternions that are not already
        unit length, since a stored pose with a bad norm means corruption.
        """
        vals = [float(v) for v in values]
        if len(vals) != 7 or not all(math.isfinite(v) for v in vals):
            raise ValueError(f"pose needs 7 finite numbers, got {values!r}")
        n = math.sqrt(sum(v * v for v in vals[3:]))
        if abs(n - 1.0) > norm_tol:
            raise ValueError(f"quaternion norm {n:.6g} is not 1")
        if abs(n - 1.0) > 1e-12:
            return cls(vals[:3], vals[3:])
        # already unit length: keep the stored bits so files round-trip exactly
        pose = cls()
        t = np.array(vals[:3])
        q = np.array(vals[3:])
        q = _sign_canonical(q)
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(pose, "translation", t)
        object.__setattr__(pose, "rotation", q)
        return pose

    def to_list(self) -> list[float]:
        return [float(v) for v in self.translation] + [float(v) for v in self.rotation]

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.zeros((4, 4))
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        m[3, 3] = 1.0
        return m

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.rotation)

    def transform_point(self, p) -> np.ndarray:
        return quat_to_matrix(self.rotation) @ np.asarray(p, dtype=float) + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.translation, other.translation)
                    and np.array_equal(self.rotation, other.rotation))

    def __hash__(self) -> int:
        return hash((self.translation.tobytes(), self.rotation.tobytes()))

    def isclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        dt, dr = pose_distance(self, other)
        return dt <= atol and dr <= atol

    def __repr__(self) -> str:
        t = ", ".join(f"{v:.4f}" for v in self.translation)
        q = ", ".join(f"{v:.4f}" for v in self.rotation)
        return f"Pose(t=[{t}], q=[{q}])"


def compose(a: Pose, b: Pose) -> Pose:
    (r0, r1, r2), (r3, r4, r5), (r6, r7, r8) = quat_to_matrix(a.rotation).tolist()
    x, y, z = b.translation.tolist()
    ax, ay, az = a.translation.tolist()
    t = (r0 * x + r1 * y + r2 * z + ax, r3 * x + r4 * y + r5 * z + ay, r6 * x + r7 * y + r8 * z + az)
    return Pose(t, quat_multiply(a.rotation, b.rotation))


def inverse(p: Pose) -> Pose:
    qi = p.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return Pose(-(quat_to_matrix(qi) @ p.translation), qi)


def relative(a: Pose, b: Pose) -> Pose:
    """Pose of b expressed in frame a, i.e. inverse(a) @ b."""
    return compose(inverse(a), b)


def slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    d = float(q0 @ q1)
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-12:
        return canonical_quat(q0 + s * (q1 - q0))
    theta = math.acos(min(1.0, d))
    sin_t = math.sin(theta)
    return canonical_quat((math.sin((1 - s) * theta) * q0 + math.sin(s * theta) * q1) / sin_t)


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation fraction {s} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    t = (1.0 - s) * a.translation + s * b.translation
    return Pose(t, slerp(a.rotation, b.rotation, s))


def rotation_angle(qa: np.ndarray, qb: np.ndarray) -> float:
    d = abs(float(qa @ qb))
    return 2.0 * math.acos(min(1.0, d))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance in meters, geodesic rotation angle in [0, pi])."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    # atan2 form is accurate for small angles where acos loses precision
    rel = quat_multiply(a.rotation * np.array([1.0, -1.0, -1.0, -1.0]), b.rotation)
    angle = 2.0 * math.atan2(float(np.linalg.norm(rel[1:])), abs(float(rel[0])))
    return dt, angle


@dataclass(frozen=True)
class TranslationNoiseSpec:
    half_width: float = 0.08

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("translation noise half-width must be >= 0")


@dataclass(frozen=True)
class RotationNoiseSpec:
    max_angle: float = math.radians(80.0)

    def __post_init__(self):
        if self.max_angle < 0:
            raise ValueError("rotation noise angle must be >= 0")


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
        if n > 1e-9:
            return v / n


def sample_pose_noise(rng: np.random.Generator, t_spec: TranslationNoiseSpec,
                      r_spec: RotationNoiseSpec) -> Pose:
    """Per-axis uniform translation and an axis-angle rotation with the axis
    uniform on the sphere and the angle uniform in [0, max_angle]."""
    t = rng.uniform(-t_spec.half_width, t_spec.half_width, 3)
    axis = random_unit_vector(rng)
    angle = rng.uniform(0.0, r_spec.max_angle)
    return Pose(t, axis_angle_quat(axis, angle))


def yaw_pose(x: float, y: float, z: float, yaw: float) -> Pose:
    return Pose((x, y, z), axis_angle_quat((0.0, 0.0, 1.0), yaw))
