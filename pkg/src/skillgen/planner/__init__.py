"""Inverse kinematics, RRT-Connect and the three-phase motion pipeline."""

from skillgen.planner.ik import IkRequest, solve_ik
from skillgen.planner.phases import (DEFAULT_PLANNER, MotionPlan, PlannerConfig, execute_plan,
                                     offset_along_z, plan_three_phase, track_line)
from skillgen.planner.rrt import (PlanRequest, densify, path_length, path_valid, rrt_connect,
                                  shortcut)

__all__ = [
    "IkRequest", "solve_ik", "DEFAULT_PLANNER", "MotionPlan", "PlannerConfig", "execute_plan",
    "offset_along_z", "plan_three_phase", "track_line", "PlanRequest", "densify", "path_length",
    "path_valid", "rrt_connect", "shortcut",
]
