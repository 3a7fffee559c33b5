"""Bodies, world description, world state and the collision scene."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union

import numpy as np

from skillgen.geometry import Pose
from skillgen.world.collision import (box_box_overlap, segment_box_distance,
                                      segment_segment_distance)
from skillgen.world.robot import RobotModel

ROBOT = "robot"
# resting contact (zero gap) is not a collision; only penetration deeper than this is
CONTACT_TOL = 1e-6


@dataclass(frozen=True)
class Sphere:
    radius: float

    def segment(self):
        return (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), self.radius

    def bounding_radius(self) -> float:
        return self.radius

    def width(self) -> float:
        return 2 * self.radius


@dataclass(frozen=True)
class Capsule:
    """Capsule along the local z axis, centered on the body origin."""

    radius: float
    half_length: float

    def segment(self):
        return (0.0, 0.0, -self.half_length), (0.0, 0.0, self.half_length), self.radius

    def bounding_radius(self) -> float:
        return self.half_length + self.radius

    def width(self) -> float:
        return 2 * self.radius


@dataclass(frozen=True)
class Box:
    half_extents: tuple[float, float, float]

    def bounding_radius(self) -> float:
        return math.sqrt(sum(h * h for h in self.half_extents))

    def width(self) -> float:
        return 2 * min(self.half_extents[:2])


Shape = Union[Sphere, Capsule, Box]


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    shape: Shape
    graspable: bool = False
    collision_enabled: bool = True


@dataclass(frozen=True)
class World:
    robot: RobotModel
    bodies: tuple[ObjectSpec, ...] = ()

    def __post_init__(self):
        names = [b.name for b in self.bodies]
        if len(set(names)) != len(names):
            raise ValueError(f"body names must be unique: {names}")
        if ROBOT in names:
            raise ValueError(f"'{ROBOT}' is reserved")
        object.__setattr__(self, "_by_name", {b.name: b for b in self.bodies})

    def spec(self, name: str) -> ObjectSpec:
        return self._by_name[name]

    def has(self, name: str) -> bool:
        return name in self._by_name


@dataclass(frozen=True)
class Attachment:
    name: str
    grasp: Pose  # object pose in the EE frame


@dataclass(frozen=True, eq=False)
class WorldState:
    q: np.ndarray
    gripper_width: float
    object_poses: dict = field(default_factory=dict)
    attachment: Optional[Attachment] = None

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "gripper_width", float(self.gripper_width))
        object.__setattr__(self, "object_poses", dict(self.object_poses))

    def with_(self, **kw) -> "WorldState":
        return replace(self, **kw)

    def ee_pose(self, robot: RobotModel) -> Pose:
        return Pose.from_matrix(robot.fk_matrix(self.q))

    def __eq__(self, other) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return (np.array_equal(self.q, other.q) and self.gripper_width == other.gripper_width
                and self.object_poses == other.object_poses and self.attachment == other.attachment)


def pair(a: str, b: str) -> frozenset:
    return frozenset((a, b))


def manipulation_ignores(state: WorldState, objects: Iterable[str], *,
                         attached_vs_all: bool = False) -> frozenset:
    """Pairs treated as expected contact while manipulating `objects`.

    The robot may touch every manipulated object (and the one it holds); the
    held object may touch the manipulated objects.  With ``attached_vs_all``
    the held object is exempt from every contact, as during the short
    retreat/approach moves.
    """
    manip = {o for o in objects if o}
    held = state.attachment.name if state.attachment else None
    if held:
        manip.add(held)
    pairs = {pair(ROBOT, m) for m in manip}
    if held:
        pairs |= {pair(held, m) for m in manip if m != held}
        if attached_vs_all:
            pairs |= {pair(held, n) for n in state.object_poses if n != held}
    return frozenset(pairs)


class CollisionScene:
    """Frozen collision geometry for one world state, queried over many q.

    Free bodies are fixed at their state poses; a held body moves with the
    EE through its grasp transform.  Pairs in `ignore` are skipped.
    """

    def __init__(self, world: World, state: WorldState, ignore: Iterable = ()):
        self.world = world
        self.robot = world.robot
        ignore = frozenset(frozenset(p) for p in ignore)
        held = state.attachment.name if state.attachment else None
        seg_a, seg_b, seg_r, seg_names = [], [], [], []
        box_c, box_r, box_h, box_names = [], [], [], []
        for name, pose in state.object_poses.items():
            spec = world.spec(name)
            if name == held or not spec.collision_enabled:
                continue
            if isinstance(spec.shape, Box):
                box_c.append(pose.translation)
                box_r.append(pose.rotation_matrix)
                box_h.append(spec.shape.half_extents)
                box_names.append(name)
            else:
                a, b, r = spec.shape.segment()
                seg_a.append(pose.transform_point(a))
                seg_b.append(pose.transform_point(b))
                seg_r.append(r)
                seg_names.append(name)
        self.seg_a = np.array(seg_a).reshape(-1, 3)
        self.seg_b = np.array(seg_b).reshape(-1, 3)
        self.seg_r = np.array(seg_r, dtype=float)
        self.box_c = np.array(box_c).reshape(-1, 3)
        self.box_r = np.array(box_r).reshape(-1, 3, 3)
        self.box_h = np.array(box_h, dtype=float).reshape(-1, 3)
        self.seg_names = seg_names
        self.box_names = box_names
        self.robot_seg_mask = np.array([pair(ROBOT, n) not in ignore for n in seg_names], dtype=bool)
        self.robot_box_mask = np.array([pair(ROBOT, n) not in ignore for n in box_names], dtype=bool)
        self.held = None
        if held is not None and world.spec(held).collision_enabled:
            self.held = world.spec(held).shape
            self.grasp = state.attachment.grasp.matrix()
            self.held_seg_mask = np.array([pair(held, n) not in ignore for n in seg_names], dtype=bool)
            self.held_box_mask = np.array([pair(held, n) not in ignore for n in box_names], dtype=bool)

    def in_collision(self, Q) -> np.ndarray:
        """Boolean collision flag for each row of Q (N, dof)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = Q.shape[0]
        hit = np.zeros(n, dtype=bool)
        frames, ee = self.robot.link_frames(Q)
        la, lb = self.robot.link_segments(frames)  # (N, L, 3)
        lr = self.robot.link_radii
        if self.robot_seg_mask.any():
            m = self.robot_seg_mask
            d = segment_segment_distance(la[:, :, None], lb[:, :, None],
                                         self.seg_a[m][None, None], self.seg_b[m][None, None])
            hit |= np.any(d < lr[None, :, None] + self.seg_r[m][None, None] - CONTACT_TOL, axis=(1, 2))
        if self.robot_box_mask.any():
            m = self.robot_box_mask
            d = segment_box_distance(la[:, :, None], lb[:, :, None], self.box_c[m][None, None],
                                     self.box_r[m][None, None], self.box_h[m][None, None])
            hit |= np.any(d < lr[None, :, None] - CONTACT_TOL, axis=(1, 2))
        if self.held is not None:
            hit |= self._held_collision(ee @ self.grasp)
        return hit

    def _held_collision(self, T: np.ndarray) -> np.ndarray:
        n = T.shape[0]
        hit = np.zeros(n, dtype=bool)
        R = T[:, :3, :3]
        t = T[:, :3, 3]
        sm, bm = self.held_seg_mask, self.held_box_mask
        if isinstance(self.held, Box):
            h = np.array(self.held.half_extents)
            if sm.any():
                d = segment_box_distance(self.seg_a[sm][None], self.seg_b[sm][None],
                                         t[:, None], R[:, None], h)
                hit |= np.any(d < self.seg_r[sm][None] - CONTACT_TOL, axis=1)
            if bm.any():
                ov = box_box_overlap(t[:, None], R[:, None], h - CONTACT_TOL, self.box_c[bm][None],
                                     self.box_r[bm][None], self.box_h[bm][None])
                hit |= np.any(ov, axis=1)
            return hit
        a, b, r = self.held.segment()
        wa = np.einsum("nij,j->ni", R, np.array(a)) + t
        wb = np.einsum("nij,j->ni", R, np.array(b)) + t
        if sm.any():
            d = segment_segment_distance(wa[:, None], wb[:, None], self.seg_a[sm][None],
                                         self.seg_b[sm][None])
            hit |= np.any(d < r + self.seg_r[sm][None] - CONTACT_TOL, axis=1)
        if bm.any():
            d = segment_box_distance(wa[:, None], wb[:, None], self.box_c[bm][None],
                                     self.box_r[bm][None], self.box_h[bm][None])
            hit |= np.any(d < r - CONTACT_TOL, axis=1)
        return hit

    def edge_valid(self, qa, qb, resolution: float) -> bool:
        """Check the straight joint-space edge qa-qb at the given resolution.

        The sample set {qa + k/n (qb - qa)} is the same in both directions.
        """
        qa = np.asarray(qa, dtype=float)
        qb = np.asarray(qb, dtype=float)
        n = max(1, int(math.ceil(np.linalg.norm(qb - qa) / resolution)))
        s = np.arange(n + 1) / n
        Q = qa[None] + s[:, None] * (qb - qa)[None]
        return not bool(self.in_collision(Q).any())


def check_collision(world: World, state: WorldState, ignore: Iterable = ()) -> bool:
    """True iff any non-ignored link/body or held-body/body pair overlaps."""
    return bool(CollisionScene(world, state, ignore).in_collision(state.q[None])[0])
