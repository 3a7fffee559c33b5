"""Serial-chain revolute robot: kinematics and link geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from skillgen.errors import DomainError
from skillgen.geometry import Pose, axis_angle_quat


_EYE3 = np.eye(3)


@dataclass(frozen=True)
class Joint:
    origin: Pose  # joint frame in the parent link frame
    axis: tuple[float, float, float]
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got {self.lo}, {self.hi}")
        n = math.sqrt(sum(a * a for a in self.axis))
        object.__setattr__(self, "axis", tuple(float(a) / n for a in self.axis))


@dataclass(frozen=True)
class LinkCapsule:
    """Capsule in the link frame: segment a-b swept by a sphere of `radius`."""

    a: tuple[float, float, float]
    b: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("capsule radius must be > 0")


@dataclass(frozen=True)
class RobotModel:
    joints: tuple[Joint, ...]
    links: tuple[LinkCapsule, ...]  # link i rides on joint i's moving frame
    ee_offset: Pose = field(default_factory=Pose)
    max_width: float = 0.08
    grasp_radius: float = 0.03
    base: Pose = field(default_factory=Pose)
    name: str = "robot"

    def __post_init__(self):
        if len(self.links) != len(self.joints):
            raise ValueError("need exactly one link capsule per joint")
        dof = len(self.joints)
        # Precomputed arrays for the batched kinematics below.
        object.__setattr__(self, "_origins", np.stack([j.origin.matrix() for j in self.joints]))
        k = np.zeros((dof, 3, 3))
        for i, j in enumerate(self.joints):
            x, y, z = j.axis
            k[i] = [[0, -z, y], [z, 0, -x], [-y, x, 0]]
        object.__setattr__(self, "_skew", k)
        object.__setattr__(self, "_skew2", k @ k)
        object.__setattr__(self, "_axes", np.array([j.axis for j in self.joints]))
        object.__setattr__(self, "lower", np.array([j.lo for j in self.joints]))
        object.__setattr__(self, "upper", np.array([j.hi for j in self.joints]))
        object.__setattr__(self, "_link_a", np.array([l.a for l in self.links], dtype=float))
        object.__setattr__(self, "_link_b", np.array([l.b for l in self.links], dtype=float))
        object.__setattr__(self, "link_radii", np.array([l.radius for l in self.links]))
        object.__setattr__(self, "_ee", self.ee_offset.matrix())
        object.__setattr__(self, "_base", self.base.matrix())

    @property
    def dof(self) -> int:
        return len(self.joints)

    def within_limits(self, q, tol: float = 1e-9) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def clip(self, q) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def reach(self) -> float:
        """Upper bound on the distance from the base origin to the EE."""
        total = 0.0
        for j in self.joints[1:]:
            total += float(np.linalg.norm(j.origin.translation))
        total += float(np.linalg.norm(self.joints[0].origin.translation))
        return total + float(np.linalg.norm(self.ee_offset.translation))

    def sample_q(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    # --- kinematics -------------------------------------------------------

    def link_frames(self, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched FK: Q (N, dof) -> link frames (N, dof, 4, 4), EE (N, 4, 4)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = Q.shape[0]
        frames = np.empty((n, self.dof, 4, 4))
        T = np.broadcast_to(self._base, (n, 4, 4))
        eye = np.eye(3)
        for i in range(self.dof):
            s = np.sin(Q[:, i])[:, None, None]
            c = np.cos(Q[:, i])[:, None, None]
            R = eye + s * self._skew[i] + (1.0 - c) * self._skew2[i]
            J = np.zeros((n, 4, 4))
            J[:, :3, :3] = self._origins[i, :3, :3] @ R
            J[:, :3, 3] = self._origins[i, :3, 3]
            J[:, 3, 3] = 1.0
            T = T @ J
            frames[:, i] = T
        return frames, T @ self._ee

    def frames_single(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Unbatched FK for one configuration; several times faster than
        ``link_frames`` on a single row."""
        frames = np.empty((self.dof, 4, 4))
        T = self._base
        for i in range(self.dof):
            s = math.sin(q[i])
            c = math.cos(q[i])
            J = self._origins[i].copy()
            J[:3, :3] = J[:3, :3] @ (_EYE3 + s * self._skew[i] + (1.0 - c) * self._skew2[i])
            T = T @ J
            frames[i] = T
        return frames, T @ self._ee

    def fk_matrix(self, q) -> np.ndarray:
        return self.frames_single(np.asarray(q, dtype=float))[1]

    def link_segments(self, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World endpoints of all link capsules: two arrays (N, dof, 3)."""
        R = frames[..., :3, :3]
        t = frames[..., :3, 3]
        a = np.einsum("nkij,kj->nki", R, self._link_a) + t
        b = np.einsum("nkij,kj->nki", R, self._link_b) + t
        return a, b

    def jacobian(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Geometric 6 x dof Jacobian (linear rows first) and EE matrix."""
        frames, ee = self.frames_single(np.asarray(q, dtype=float))
        axes = np.einsum("kij,kj->ki", frames[:, :3, :3], self._axes)
        lin = np.cross(axes, ee[:3, 3] - frames[:, :3, 3])
        return np.vstack([lin.T, axes.T]), ee


def forward_kinematics(robot: RobotModel, q) -> Pose:
    """EE pose in the world for configuration q (radians)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (robot.dof,):
        raise DomainError(f"expected {robot.dof} joint values, got shape {q.shape}")
    if not robot.within_limits(q):
        raise DomainError(f"configuration {q} violates joint limits")
    return Pose.from_matrix(robot.fk_matrix(q))


def three_link_arm() -> RobotModel:
    """The small z-y-y arm (link lengths 0.3 / 0.3 / 0.15 m, reach 0.75 m).

    Link 1 is a vertical column; the EE frame sits at the tip of link 3 with
    its z axis along the link so that +z points out of the palm.
    """
    pi = math.pi
    joints = (
        Joint(Pose(), (0, 0, 1), -pi, pi),
        Joint(Pose((0, 0, 0.3)), (0, 1, 0), -pi / 2, pi / 2),
        Joint(Pose((0.3, 0, 0)), (0, 1, 0), -2.6, 2.6),
    )
    links = (
        LinkCapsule((0, 0, 0), (0, 0, 0.3), 0.04),
        LinkCapsule((0, 0, 0), (0.3, 0, 0), 0.03),
        LinkCapsule((0, 0, 0), (0.15, 0, 0), 0.025),
    )
    ee = Pose((0.15, 0, 0), axis_angle_quat((0, 1, 0), pi / 2))
    return RobotModel(joints, links, ee, name="arm3")


def desk_arm() -> RobotModel:
    """Six-joint desk arm with a spherical wrist, used by the shipped tasks.

    A three-joint chain only spans a 3-D family of EE poses, which cannot
    follow planar object motion (x, y, yaw) plus the orientation noise of
    initiation augmentation; the wrist makes every pose in the workspace
    reachable.  The two roll joints turn a full circle each way so that
    large wrist rotations never get stuck at a limit.
    """
    pi = math.pi
    joints = (
        Joint(Pose(), (0, 0, 1), -pi, pi),
        Joint(Pose((0, 0, 0.3)), (0, 1, 0), -2.0, 2.0),
        Joint(Pose((0.3, 0, 0)), (0, 1, 0), -2.7, 2.7),
        Joint(Pose((0.15, 0, 0)), (1, 0, 0), -2 * pi, 2 * pi),
        Joint(Pose((0.15, 0, 0)), (0, 1, 0), -2.2, 2.2),
        Joint(Pose(), (1, 0, 0), -2 * pi, 2 * pi),
    )
    links = (
        LinkCapsule((0, 0, 0), (0, 0, 0.3), 0.04),
        LinkCapsule((0, 0, 0), (0.3, 0, 0), 0.035),
        LinkCapsule((0, 0, 0), (0.15, 0, 0), 0.03),
        LinkCapsule((0, 0, 0), (0.15, 0, 0), 0.03),
        LinkCapsule((0, 0, 0), (0, 0, 0), 0.03),
        LinkCapsule((0.03, 0, 0), (0.1, 0, 0), 0.015),  # fingers, ending 2 cm short of the EE point
    )
    ee = Pose((0.12, 0, 0), axis_angle_quat((0, 1, 0), pi / 2))
    return RobotModel(joints, links, ee, name="desk6")


BUILTIN_ROBOTS = {"arm3": three_link_arm, "desk6": desk_arm}
