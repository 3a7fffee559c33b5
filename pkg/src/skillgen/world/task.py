"""Task definitions: reset distributions, success predicates, file loading."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from skillgen.errors import ConfigError, UnsatisfiableReset
from skillgen.geometry import Pose, yaw_pose
from skillgen.world.collision import (box_box_separation, segment_box_distance,
                                      segment_segment_distance)
from skillgen.world.model import Box, Capsule, CollisionScene, ObjectSpec, Sphere, World, WorldState
from skillgen.world.robot import BUILTIN_ROBOTS, Joint, LinkCapsule, RobotModel
from skillgen.world.sim import Gripper

MAX_RESET_TRIES = 1000


@dataclass(frozen=True)
class Region:
    low: tuple[float, float, float]
    high: tuple[float, float, float]
    yaw: tuple[float, float] = (0.0, 0.0)

    def sample(self, rng: np.random.Generator) -> Pose:
        x, y, z = rng.uniform(self.low, self.high)
        return yaw_pose(x, y, z, rng.uniform(*self.yaw))

    def contains(self, p: Pose, tol: float = 1e-12) -> bool:
        t = p.translation
        return bool(np.all(t >= np.array(self.low) - tol) and np.all(t <= np.array(self.high) + tol))


@dataclass(frozen=True)
class Goal:
    object: str
    position: tuple[float, float, float]
    tolerance: float
    relative_to: Optional[str] = None
    require_detached: bool = True

    def satisfied(self, state: WorldState) -> bool:
        if self.object not in state.object_poses:
            return False
        if self.require_detached and state.attachment and state.attachment.name == self.object:
            return False
        goal = np.array(self.position, dtype=float)
        if self.relative_to is not None:
            goal = state.object_poses[self.relative_to].transform_point(goal)
        err = float(np.linalg.norm(state.object_poses[self.object].translation - goal))
        return err <= self.tolerance


@dataclass(frozen=True)
class Keyframe:
    pose: Pose  # EE pose in the skill object's frame
    gripper: Gripper = Gripper.HOLD
    steps: int = 1


@dataclass(frozen=True)
class SkillStep:
    skill: str
    object: str


@dataclass(frozen=True)
class TaskSpec:
    name: str
    world: World
    skill_plan: tuple[SkillStep, ...]
    variants: dict
    success: tuple[Goal, ...]
    home_q: tuple[float, ...]
    horizon: int = 600
    clearance: float = 0.02
    fixed_poses: dict = field(default_factory=dict)  # obstacles with a static pose
    workspace: tuple = ((-1.0, -1.0, -0.2), (1.0, 1.0, 1.0))
    expert: tuple = ()  # per skill: tuple of Keyframe
    objects: tuple[str, ...] = ()

    def __post_init__(self):
        for step in self.skill_plan:
            if not self.world.has(step.object):
                raise ConfigError(f"skill plan references unknown object '{step.object}'")
        lo, hi = (np.array(v) for v in self.workspace)
        for vname, regions in self.variants.items():
            for body, region in regions.items():
                if not self.world.has(body):
                    raise ConfigError(f"variant {vname} samples unknown body '{body}'")
                if np.any(np.array(region.low) > np.array(region.high)):
                    raise ConfigError(f"variant {vname}: region for {body} has low > high")
                if np.any(np.array(region.low) < lo) or np.any(np.array(region.high) > hi):
                    raise ConfigError(f"variant {vname}: region for {body} leaves the workspace")
            for obj in self.objects:
                if obj not in regions and obj not in self.fixed_poses:
                    raise ConfigError(f"variant {vname} has no pose for object '{obj}'")
        if self.expert and len(self.expert) != len(self.skill_plan):
            raise ConfigError("expert script needs one keyframe list per skill")

    def variant(self, name: str) -> dict:
        try:
            return self.variants[name]
        except KeyError:
            raise ConfigError(f"task '{self.name}' has no variant '{name}' "
                              f"(known: {', '.join(self.variants)})") from None


def reset(task: TaskSpec, variant: str, rng: np.random.Generator) -> WorldState:
    """Sample body poses from the variant, rejecting overlapping layouts.

    Sampled bodies must keep `task.clearance` between their surfaces (see
    body_distance); fixed scenery such as a table is exempt.  The robot at
    its home configuration must be collision-free.
    """
    regions = task.variant(variant)
    world = task.world
    home = np.array(task.home_q, dtype=float)
    for _ in range(MAX_RESET_TRIES):
        poses = {name: region.sample(rng) for name, region in regions.items()}
        if not _clear(poses, world, task.clearance):
            continue
        for name, pose in task.fixed_poses.items():
            poses.setdefault(name, pose)
        state = WorldState(home, world.robot.max_width, poses)
        if CollisionScene(world, state).in_collision(home[None])[0]:
            continue
        return state
    raise UnsatisfiableReset(f"no valid layout for {task.name}/{variant} after {MAX_RESET_TRIES} tries")


def _clear(poses: dict, world: World, margin: float) -> bool:
    names = list(poses)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            if body_distance(world.spec(a).shape, poses[a], world.spec(b).shape, poses[b]) < margin:
                return False
    return True


def body_distance(sa, pa: Pose, sb, pb: Pose) -> float:
    """Surface gap between two bodies.

    Exact for sphere/capsule pairs and for a sphere or capsule against a
    box; for two boxes it is the separating-axis lower bound.
    """
    if isinstance(sa, Box) and isinstance(sb, Box):
        return float(box_box_separation(pa.translation, pa.rotation_matrix, sa.half_extents,
                                        pb.translation, pb.rotation_matrix, sb.half_extents))
    if isinstance(sa, Box):
        sa, pa, sb, pb = sb, pb, sa, pa
    a0, a1, ra = sa.segment()
    p0, p1 = pa.transform_point(a0), pa.transform_point(a1)
    if isinstance(sb, Box):
        d = segment_box_distance(p0, p1, pb.translation, pb.rotation_matrix, np.array(sb.half_extents))
        return float(d) - ra
    b0, b1, rb = sb.segment()
    d = segment_segment_distance(p0, p1, pb.transform_point(b0), pb.transform_point(b1))
    return float(d) - ra - rb


def check_success(task: TaskSpec, state: WorldState) -> bool:
    return all(goal.satisfied(state) for goal in task.success)


# --- file loading -----------------------------------------------------------

def _schema() -> dict:
    return json.loads(resources.files("skillgen.data").joinpath("task.schema.json").read_text())


def builtin_tasks() -> list[str]:
    folder = resources.files("skillgen.data").joinpath("tasks")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def _shape(d: dict):
    kind = d["type"]
    if kind == "sphere":
        return Sphere(float(d["radius"]))
    if kind == "box":
        return Box(tuple(float(v) for v in d["half_extents"]))
    return Capsule(float(d["radius"]), float(d["half_length"]))


def _robot(d: dict) -> RobotModel:
    if "builtin" in d:
        return BUILTIN_ROBOTS[d["builtin"]]()
    joints, links = [], []
    for j in d["joints"]:
        joints.append(Joint(Pose.from_list(j["origin"]), tuple(j["axis"]), *j["limits"]))
        links.append(LinkCapsule(tuple(j["link"]["a"]), tuple(j["link"]["b"]), j["link"]["radius"]))
    return RobotModel(tuple(joints), tuple(links), Pose.from_list(d["ee_offset"]),
                      max_width=d.get("max_width", 0.08), grasp_radius=d.get("grasp_radius", 0.03),
                      name=d.get("name", "robot"))


def task_from_dict(d: dict) -> TaskSpec:
    try:
        jsonschema.validate(d, _schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"invalid task file at '{path}': {exc.message}") from None
    robot = _robot(d["robot"])
    bodies, fixed = [], {}
    for o in d["objects"]:
        bodies.append(ObjectSpec(o["name"], _shape(o["shape"]), o.get("graspable", False),
                                 o.get("collision_enabled", True)))
        if "pose" in o:
            fixed[o["name"]] = Pose.from_list(o["pose"])
    for o in d.get("obstacles", []):
        bodies.append(ObjectSpec(o["name"], _shape(o["shape"]), False, o.get("collision_enabled", True)))
        if "pose" in o:
            fixed[o["name"]] = Pose.from_list(o["pose"])
    try:
        world = World(robot, tuple(bodies))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    variants = {
        name: {body: Region(tuple(r["low"]), tuple(r["high"]), tuple(r.get("yaw", (0.0, 0.0))))
               for body, r in regions.items()}
        for name, regions in d["variants"].items()
    }
    success = tuple(Goal(g["object"], tuple(g["position"]), g["tolerance"], g.get("relative_to"),
                         g.get("require_detached", True)) for g in d["success"])
    expert = tuple(
        tuple(Keyframe(Pose.from_list(k["pose"]), Gripper(k.get("gripper", "hold")), k.get("steps", 1))
              for k in skill)
        for skill in d.get("expert", [])
    )
    home = d.get("home_q", [0.0] * robot.dof)
    if len(home) != robot.dof or not robot.within_limits(home):
        raise ConfigError("home_q must have one in-limit value per joint")
    ws = d.get("workspace", {"low": [-1, -1, -0.2], "high": [1, 1, 1]})
    return TaskSpec(
        name=d["name"], world=world,
        skill_plan=tuple(SkillStep(s["skill"], s["object"]) for s in d["skill_plan"]),
        variants=variants, success=success, home_q=tuple(float(v) for v in home),
        horizon=d.get("horizon", 600), clearance=d.get("clearance", 0.02), fixed_poses=fixed,
        workspace=(tuple(ws["low"]), tuple(ws["high"])), expert=expert,
        objects=tuple(o["name"] for o in d["objects"]),
    )


def load_task(path_or_name) -> TaskSpec:
    """Load a task from a JSON file path or the name of a shipped task."""
    p = Path(path_or_name)
    if p.suffix == ".json" or p.exists():
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read task file {p}: {exc}") from None
    else:
        res = resources.files("skillgen.data").joinpath("tasks", f"{path_or_name}.json")
        if not res.is_file():
            raise ConfigError(f"unknown task '{path_or_name}' (shipped: {', '.join(builtin_tasks())})")
        text = res.read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"task file is not valid JSON: {exc}") from None
    return task_from_dict(d)
