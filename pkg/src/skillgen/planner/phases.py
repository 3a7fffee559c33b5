"""Retreat, transit/transfer and approach: the three-phase motion pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from skillgen.demos import Step
from skillgen.errors import ExecutionFailure, IkUnreachable, PlanFailure
from skillgen.geometry import Pose, compose, interpolate
from skillgen.planner.ik import IkRequest, solve_ik
from skillgen.planner.rrt import PlanRequest, densify, path_valid, rrt_connect
from skillgen.world.model import CollisionScene, World, WorldState, manipulation_ignores
from skillgen.world.sim import (DEFAULT_CAPS, ControlCaps, Gripper, dls_track, pose_delta,
                                step_joint_space)

PHASES = ("retreat", "transit", "transfer", "approach")


@dataclass(frozen=True)
class PlannerConfig:
    retreat_distance: float = 0.05
    approach_distance: float = 0.05  # also the pre-pose offset behind the target
    step_size: float = 0.1
    max_iterations: int = 5000
    validity_resolution: float = 0.02
    shortcut_attempts: int = 50
    line_resolution: float = 0.01  # EE spacing when tracking straight lines
    ik_restarts: int = 10


DEFAULT_PLANNER = PlannerConfig()


@dataclass(frozen=True, eq=False)
class MotionPlan:
    """Joint waypoints with contiguous phase spans.

    `spans` holds (label, start, end) half-open index ranges that partition
    range(len(waypoints)).  Waypoint 0 is the start configuration.
    """

    waypoints: np.ndarray
    spans: tuple

    def __post_init__(self):
        w = np.array(self.waypoints, dtype=float)
        w.flags.writeable = False
        object.__setattr__(self, "waypoints", w)
        object.__setattr__(self, "spans", tuple(tuple(s) for s in self.spans))
        pos = 0
        for label, a, b in self.spans:
            if a != pos or b < a:
                raise ValueError("phase spans must partition the waypoints in order")
            pos = b
        if pos != len(w):
            raise ValueError("phase spans must cover every waypoint")

    def labels(self) -> list[str]:
        out = []
        for label, a, b in self.spans:
            out += [label] * (b - a)
        return out

    def __len__(self) -> int:
        return len(self.waypoints)


def offset_along_z(pose: Pose, distance: float) -> Pose:
    """Move `pose` by `distance` along its own z axis."""
    return compose(pose, Pose((0.0, 0.0, distance)))


def track_line(world: World, q0, start: Pose, goal: Pose, resolution: float,
               tol: tuple[float, float] = (1e-3, 1e-2)) -> list:
    """Resolved-rate tracking of the straight EE line start -> goal.

    Returns the joint configurations (excluding q0) reached at each sample;
    raises PlanFailure if any sample cannot be tracked within tolerance.
    """
    dist = float(np.linalg.norm(goal.translation - start.translation))
    n = max(1, math.ceil(dist / resolution))
    q = np.asarray(q0, dtype=float)
    out = []
    for k in range(1, n + 1):
        p = interpolate(start, goal, k / n)
        q, perr, rerr = dls_track(world.robot, q, p.matrix(), iters=100, tol=1e-7)
        if perr > tol[0] or rerr > tol[1]:
            raise PlanFailure(f"straight-line EE motion leaves the tracking tolerance ({perr:.4f} m)")
        out.append(q)
    return out


def plan_three_phase(world: World, state: WorldState, target: Pose, rng: np.random.Generator, *,
                     retreat_objects: Iterable[str] = (), approach_object: Optional[str] = None,
                     config: PlannerConfig = DEFAULT_PLANNER,
                     skip_retreat: bool = False) -> MotionPlan:
    """Retreat from the current pose, plan to the pre-pose, approach `target`.

    Retreat and approach exempt contact with the objects being manipulated
    (and between a held object and those objects); the middle phase checks
    everything, carrying any held object along as part of the robot.
    """
    if not (np.all(np.isfinite(target.translation)) and np.all(np.isfinite(target.rotation))):
        raise ValueError("target pose must be finite")
    robot = world.robot
    q_start = np.array(state.q, dtype=float)
    holding = state.attachment is not None
    mid_label = "transfer" if holding else "transit"
    free_scene = CollisionScene(world, state)
    approach_ignore = manipulation_ignores(state, [approach_object] if approach_object else [])
    approach_scene = CollisionScene(world, state, approach_ignore)

    # retreat
    retreat_qs = []
    if not skip_retreat and config.retreat_distance > 0:
        cur = Pose.from_matrix(robot.fk_matrix(q_start))
        retreat_scene = CollisionScene(world, state, manipulation_ignores(state, retreat_objects))
        retreat_qs = track_line(world, q_start, cur, offset_along_z(cur, -config.retreat_distance),
                                config.line_resolution)
        retreat_qs = list(densify([q_start] + retreat_qs, config.step_size)[1:])
        if not path_valid(retreat_scene, [q_start] + retreat_qs, config.validity_resolution):
            raise PlanFailure("retreat motion is in collision")
    q_mid_start = retreat_qs[-1] if retreat_qs else q_start

    # IK at the target, then back out along -z to find a consistent pre-pose
    ik_ok = lambda q: not approach_scene.in_collision(q[None])[0]
    q_goal = solve_ik(robot, IkRequest(target, seed_q=q_mid_start, restarts=config.ik_restarts),
                      rng, accept=ik_ok)
    pre = offset_along_z(target, -config.approach_distance)
    backout = track_line(world, q_goal, target, pre, config.line_resolution)
    approach_qs = list(densify((backout[::-1] + [q_goal]), config.step_size))
    q_pre = approach_qs[0]
    if not path_valid(approach_scene, approach_qs, config.validity_resolution):
        raise PlanFailure("approach motion is in collision")

    # transit / transfer
    mid = rrt_connect(PlanRequest(q_mid_start, q_pre, free_scene, config.step_size,
                                  config.max_iterations, config.validity_resolution,
                                  config.shortcut_attempts), rng)
    wps = [q_start] + retreat_qs + list(mid[1:]) + approach_qs[1:]
    n_r = 1 + len(retreat_qs)
    n_m = len(mid) - 1
    spans = [("retreat", 0, n_r), (mid_label, n_r, n_r + n_m),
             ("approach", n_r + n_m, len(wps))]
    return MotionPlan(np.array(wps), spans)


def execute_plan(world: World, state: WorldState, plan: MotionPlan, *,
                 caps: ControlCaps = DEFAULT_CAPS, step_size: float = 0.1):
    """Track the waypoints with joint-space control at 20 Hz.

    Edges are subdivided so every tick's EE motion fits in the per-tick caps;
    each tick is logged as a motion step with its normalized delta action.
    Returns (final state, steps, phase label per step).
    """
    robot = world.robot
    labels = plan.labels()
    steps, phases = [], []
    if len(plan) == 0:
        return state, steps, phases
    if np.linalg.norm(plan.waypoints[0] - state.q) > 5 * step_size:
        raise ExecutionFailure("plan does not start at the current configuration")
    q_prev = np.array(state.q, dtype=float)
    ee_prev = state.ee_pose(robot)
    for idx in range(1, len(plan)):
        qa, qb = q_prev, plan.waypoints[idx]
        ee_b = Pose.from_matrix(robot.fk_matrix(qb))
        n = max(1, math.ceil(float(np.max(np.abs(pose_delta(ee_prev, ee_b, caps)))) - 1e-9))
        while True:
            qs = [qa + (k / n) * (qb - qa) for k in range(1, n + 1)]
            ees = [Pose.from_matrix(robot.fk_matrix(q)) for q in qs]
            prev = [ee_prev] + ees[:-1]
            acts = [pose_delta(a, b, caps) for a, b in zip(prev, ees)]
            if all(np.max(np.abs(a)) <= 1.0 for a in acts):
                break
            n *= 2
        for q_cmd, ee, act in zip(qs, ees, acts):
            before = state
            state = step_joint_space(world, state, q_cmd)
            if np.linalg.norm(state.q - q_cmd) > 5 * step_size:
                raise ExecutionFailure("joint tracking diverged from the plan")
            steps.append(Step(before.q, ee_prev, before.gripper_width, ee, Gripper.HOLD, act, ee))
            phases.append(labels[idx])
            ee_prev = ee
        q_prev = np.array(state.q)
    return state, steps, phases
