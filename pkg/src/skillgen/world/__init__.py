"""Kinematic desk-scale simulator: robot, bodies, collision, stepping and tasks."""

from skillgen.world.model import (Attachment, Box, Capsule, CollisionScene, ObjectSpec, Sphere,
                                  World, WorldState, check_collision, manipulation_ignores)
from skillgen.world.robot import RobotModel, desk_arm, forward_kinematics, three_link_arm
from skillgen.world.sim import (CONTROL_HZ, DEFAULT_CAPS, ControlCaps, Gripper, apply_delta,
                                pose_delta, step_action, step_joint_space,
                                step_task_space)
from skillgen.world.task import TaskSpec, check_success, load_task, reset

__all__ = [
    "Attachment", "Box", "Capsule", "CollisionScene", "ObjectSpec", "Sphere", "World",
    "WorldState", "check_collision", "manipulation_ignores", "RobotModel", "desk_arm",
    "forward_kinematics", "three_link_arm", "CONTROL_HZ", "DEFAULT_CAPS", "ControlCaps",
    "Gripper", "apply_delta", "pose_delta", "step_action", "step_joint_space", "step_task_space", "TaskSpec",
    "check_success", "load_task", "reset",
]
