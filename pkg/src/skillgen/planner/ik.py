"""Damped-least-squares inverse kinematics with random restarts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from skillgen.errors import IkUnreachable, PlanFailure
from skillgen.geometry import Pose, pose_distance
from skillgen.world.robot import RobotModel
from skillgen.world.sim import dls_track


@dataclass(frozen=True)
class IkRequest:
    target: Pose
    seed_q: Optional[np.ndarray] = None
    pos_tol: float = 1e-3
    rot_tol: float = 1e-2
    max_iters: int = 200
    damping: float = 0.05
    restarts: int = 10

    def __post_init__(self):
        if self.pos_tol <= 0 or self.rot_tol <= 0:
            raise ValueError("IK tolerances must be positive")
        if self.max_iters < 0 or self.restarts < 0:
            raise ValueError("iteration and restart counts must be non-negative")


def _converged(robot: RobotModel, q, req: IkRequest) -> bool:
    # re-verify through FK, independent of the iterate's own error estimate
    dp, dr = pose_distance(Pose.from_matrix(robot.fk_matrix(q)), req.target)
    return dp <= req.pos_tol and dr <= req.rot_tol and robot.within_limits(q)


def solve_ik(robot: RobotModel, req: IkRequest, rng: Optional[np.random.Generator] = None,
             accept: Optional[Callable[[np.ndarray], bool]] = None) -> np.ndarray:
    """Joint vector whose FK lies within tolerance of `req.target`.

    The seed is tried first, then up to `req.restarts` uniform random seeds.
    `accept` can reject otherwise valid solutions (e.g. ones in collision),
    which makes the solver move on to the next restart.  If solutions were
    found but all rejected the failure is a PlanFailure, since the target
    itself is reachable.
    """
    goal = req.target.matrix()
    if np.linalg.norm(req.target.translation - robot.base.translation) > robot.reach() + req.pos_tol:
        raise IkUnreachable(f"target {np.round(req.target.translation, 3)} is beyond the arm's reach")
    seeds = []
    if req.seed_q is not None:
        seeds.append(robot.clip(np.asarray(req.seed_q, dtype=float)))
    rng = rng if rng is not None else np.random.default_rng(0)
    rejected = 0
    for attempt in range(len(seeds) + req.restarts):
        q0 = seeds[attempt] if attempt < len(seeds) else robot.sample_q(rng)
        tol = 0.1 * min(req.pos_tol, req.rot_tol)
        q, _, _ = dls_track(robot, q0, goal, iters=req.max_iters, damping=req.damping, tol=tol)
        if _converged(robot, q, req):
            if accept is None or accept(q):
                return q
            rejected += 1
    if rejected:
        # kinematically reachable, but every solution found was refused
        raise PlanFailure(f"all {rejected} IK solutions for the target were rejected (collision)")
    raise IkUnreachable(f"no IK solution within ({req.pos_tol} m, {req.rot_tol} rad) "
                        f"after {req.restarts} restarts")
