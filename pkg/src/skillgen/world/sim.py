"""Quasi-static kinematic stepping at 20 Hz.

Objects only move while rigidly attached to the gripper.  The task-space
controller clamps each tick's EE motion to per-axis caps and tracks the
clamped target with damped least squares.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from skillgen.geometry import (Pose, compose, inverse, matrix_to_rotvec,
                               quat_multiply, quat_to_rotvec, rotvec_to_quat)
from skillgen.world.model import Attachment, World, WorldState
from skillgen.world.robot import RobotModel

CONTROL_HZ = 20


class Gripper(str, enum.Enum):
    OPEN = "open"
    CLOSE = "close"
    HOLD = "hold"


@dataclass(frozen=True)
class ControlCaps:
    max_translation: float = 0.05  # meters per tick, per axis
    max_rotation: float = 0.2  # radians per tick, per rotation-vector component


DEFAULT_CAPS = ControlCaps()


def pose_delta(current: Pose, target: Pose, caps: ControlCaps = DEFAULT_CAPS) -> np.ndarray:
    """Normalized (unclipped) delta action taking `current` to `target`.

    Translation is the world-frame offset; rotation is the world-frame
    rotation vector of target * current^-1.  Both are divided by the caps.
    """
    dt = (target.translation - current.translation) / caps.max_translation
    rel = quat_multiply(target.rotation, current.rotation * np.array([1.0, -1.0, -1.0, -1.0]))
    dr = quat_to_rotvec(rel) / caps.max_rotation
    return np.concatenate([dt, dr])


def apply_delta(current: Pose, delta, caps: ControlCaps = DEFAULT_CAPS) -> Pose:
    delta = np.asarray(delta, dtype=float)
    t = current.translation + delta[:3] * caps.max_translation
    q = quat_multiply(rotvec_to_quat(delta[3:] * caps.max_rotation), current.rotation)
    return Pose(t, q)


def dls_track(robot: RobotModel, q, goal: np.ndarray, *, iters: int = 10, damping: float = 0.05,
              tol: float = 1e-6, max_step: tuple[float, float] = (0.05, 0.3)):
    """Damped-least-squares iterations from q toward the 4x4 goal matrix.

    Returns (q, position error, rotation error).  Joint limits clamp every
    iterate; a singular Jacobian is handled by the damping term.
    """
    q = np.array(q, dtype=float)
    lam2 = damping * damping
    eye6 = np.eye(6)
    for _ in range(iters + 1):
        J, ee = robot.jacobian(q)
        ep = goal[:3, 3] - ee[:3, 3]
        er = matrix_to_rotvec(goal[:3, :3] @ ee[:3, :3].T)
        pn = float(np.linalg.norm(ep))
        rn = float(np.linalg.norm(er))
        if (pn <= tol and rn <= tol) or iters == 0:
            return q, pn, rn
        iters -= 1
        if pn > max_step[0]:
            ep = ep * (max_step[0] / pn)
        if rn > max_step[1]:
            er = er * (max_step[1] / rn)
        e = np.concatenate([ep, er])
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * eye6, e)
        q = np.clip(q + dq, robot.lower, robot.upper)
    return q, pn, rn


def step_task_space(world: World, state: WorldState, target: Pose, gripper_cmd=Gripper.HOLD, *,
                    caps: ControlCaps = DEFAULT_CAPS, iters: int = 10) -> WorldState:
    """One control tick toward an absolute EE target."""
    if not (np.all(np.isfinite(target.translation)) and np.all(np.isfinite(target.rotation))):
        raise ValueError("target pose must be finite")
    cur = Pose.from_matrix(world.robot.fk_matrix(state.q))
    return step_action(world, state, pose_delta(cur, target, caps), gripper_cmd,
                       caps=caps, iters=iters, current=cur)


def step_action(world: World, state: WorldState, delta, gripper_cmd=Gripper.HOLD, *,
                caps: ControlCaps = DEFAULT_CAPS, iters: int = 10,
                current: Pose | None = None) -> WorldState:
    """One control tick for a normalized delta action (clipped to [-1, 1])."""
    robot = world.robot
    cur = current if current is not None else Pose.from_matrix(robot.fk_matrix(state.q))
    delta = np.clip(np.asarray(delta, dtype=float), -1.0, 1.0)
    if np.max(np.abs(delta)) < 1e-12:
        q = state.q
    else:
        goal = apply_delta(cur, delta, caps)
        q, _, _ = dls_track(robot, state.q, goal.matrix(), iters=iters)
    return _finish_tick(world, state, q, Gripper(gripper_cmd))


def step_joint_space(world: World, state: WorldState, q_cmd) -> WorldState:
    """One tick of joint-space control (kinematic tracking, limit-clamped)."""
    q = world.robot.clip(np.asarray(q_cmd, dtype=float))
    return _finish_tick(world, state, q, Gripper.HOLD)


def _finish_tick(world: World, state: WorldState, q, cmd: Gripper) -> WorldState:
    robot = world.robot
    ee = Pose.from_matrix(robot.fk_matrix(q))
    poses = state.object_poses
    attachment = state.attachment
    width = state.gripper_width
    if cmd is Gripper.CLOSE and attachment is None and width >= robot.max_width:
        best, best_d = None, robot.grasp_radius
        for name, pose in poses.items():
            spec = world.spec(name)
            if not spec.graspable:
                continue
            d = float(np.linalg.norm(pose.translation - ee.translation))
            if d <= best_d:
                best, best_d = name, d
        if best is not None:
            attachment = Attachment(best, compose(inverse(ee), poses[best]))
            width = min(robot.max_width, world.spec(best).shape.width())
        else:
            width = 0.0
    elif cmd is Gripper.OPEN:
        attachment = None
        width = robot.max_width
    if attachment is not None:
        poses = dict(poses)
        poses[attachment.name] = compose(ee, attachment.grasp)
    if attachment is None and poses is state.object_poses and np.array_equal(q, state.q) \
            and width == state.gripper_width:
        return state
    return WorldState(q, width, poses, attachment)
