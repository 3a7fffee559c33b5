import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillgen.errors import ExecutionFailure, IkUnreachable, PlanFailure
from skillgen.geometry import Pose, compose, pose_distance
from skillgen.planner import (DEFAULT_PLANNER, IkRequest, MotionPlan, PlanRequest, densify,
                              execute_plan, offset_along_z, path_length, path_valid,
                              plan_three_phase, rrt_connect, shortcut, solve_ik)
from skillgen.world.model import (Attachment, CollisionScene, ObjectSpec, Sphere, World,
                                  WorldState, check_collision)
from skillgen.world.robot import forward_kinematics
from skillgen.world.task import reset


def blocked_corridor(robot):
    """Two arm3 configurations whose straight EE line runs through a ball."""
    qa = np.array([-0.8, 0.3, 0.6])
    qb = np.array([0.8, 0.3, 0.6])
    mid = (forward_kinematics(robot, qa).translation + forward_kinematics(robot, qb).translation) / 2
    world = World(robot, (ObjectSpec("ball", Sphere(0.08)),))
    state = WorldState(qa, robot.max_width, {"ball": Pose(mid)})
    return qa, qb, world, state


# --- IK -------------------------------------------------------------------------

def test_ik_request_validation():
    with pytest.raises(ValueError):
        IkRequest(Pose(), pos_tol=0)
    with pytest.raises(ValueError):
        IkRequest(Pose(), rot_tol=-1)


def test_ik_seed_at_solution_returns_seed(arm3):
    q0 = np.array([0.3, 0.2, -0.5])
    q = solve_ik(arm3, IkRequest(forward_kinematics(arm3, q0), seed_q=q0))
    assert np.array_equal(q, q0)


def test_ik_far_target_unreachable(arm3):
    with pytest.raises(IkUnreachable):
        solve_ik(arm3, IkRequest(Pose((10, 0, 0))))


@pytest.mark.parametrize("name", ["arm3", "desk6"])
def test_ik_round_trips(name, arm3, desk6):
    robot = {"arm3": arm3, "desk6": desk6}[name]
    rng = np.random.default_rng(11)
    ok = 0
    for _ in range(50):
        target = forward_kinematics(robot, robot.sample_q(rng))
        try:
            q = solve_ik(robot, IkRequest(target), rng)
        except IkUnreachable:
            continue
        dp, dr = pose_distance(forward_kinematics(robot, q), target)
        assert dp <= 1e-3 and dr <= 1e-2 and robot.within_limits(q)
        ok += 1
    assert ok >= 48


def test_ik_rejected_solutions_are_plan_failures(arm3):
    target = forward_kinematics(arm3, np.array([0.2, 0.4, 0.4]))
    with pytest.raises(PlanFailure):
        solve_ik(arm3, IkRequest(target, restarts=3), np.random.default_rng(0), accept=lambda q: False)


def test_ik_deterministic(desk6):
    target = forward_kinematics(desk6, np.array([0.1, -0.5, 1.0, 0.2, 0.3, -0.1]))
    a = solve_ik(desk6, IkRequest(target), np.random.default_rng(3))
    b = solve_ik(desk6, IkRequest(target), np.random.default_rng(3))
    assert np.array_equal(a, b)


# --- RRT-Connect ----------------------------------------------------------------------

def test_rrt_start_equals_goal(arm3):
    q = np.array([0.1, 0.2, 0.3])
    scene = CollisionScene(World(arm3), WorldState(q, 0.08, {}))
    path = rrt_connect(PlanRequest(q, q, scene), np.random.default_rng(0))
    assert path.shape == (1, 3) and np.array_equal(path[0], q)


def test_rrt_empty_world(arm3):
    rng = np.random.default_rng(1)
    scene = CollisionScene(World(arm3), WorldState(np.zeros(3), 0.08, {}))
    for _ in range(20):
        qa, qb = arm3.sample_q(rng), arm3.sample_q(rng)
        path = rrt_connect(PlanRequest(qa, qb, scene), rng)
        assert np.array_equal(path[0], qa) and np.array_equal(path[-1], qb)
        assert np.all(np.linalg.norm(np.diff(path, axis=0), axis=1) <= 0.1 + 1e-9)
        assert path_valid(scene, path, 0.02)


def test_rrt_blocked_corridor(arm3):
    qa, qb, world, state = blocked_corridor(arm3)
    scene = CollisionScene(world, state)
    assert not scene.edge_valid(qa, qb, 0.02)
    for seed in range(10):
        path = rrt_connect(PlanRequest(qa, qb, scene), np.random.default_rng(seed))
        assert path_valid(scene, path, 0.02)
        dense = densify(path, 0.02)
        assert not scene.in_collision(dense).any()


def test_rrt_deterministic(arm3):
    qa, qb, world, state = blocked_corridor(arm3)
    scene = CollisionScene(world, state)
    a = rrt_connect(PlanRequest(qa, qb, scene), np.random.default_rng(4))
    b = rrt_connect(PlanRequest(qa, qb, scene), np.random.default_rng(4))
    assert np.array_equal(a, b)


def test_rrt_failures(arm3):
    qa, qb, world, state = blocked_corridor(arm3)
    scene = CollisionScene(world, state)
    with pytest.raises(PlanFailure, match="iterations"):
        rrt_connect(PlanRequest(qa, qb, scene, max_iterations=0), np.random.default_rng(0))
    inside = np.array([0.0, 0.3, 0.6])
    ball = world.spec("ball")
    bad = WorldState(qa, 0.08, {"ball": forward_kinematics(arm3, inside)})
    with pytest.raises(PlanFailure, match="start"):
        rrt_connect(PlanRequest(inside, qb, CollisionScene(world, bad)), np.random.default_rng(0))
    with pytest.raises(PlanFailure, match="limits"):
        rrt_connect(PlanRequest(qa, np.array([0, 3.0, 0]), scene), np.random.default_rng(0))
    assert ball.shape.radius == 0.08


def test_path_validity_direction_independent(arm3):
    qa, qb, world, state = blocked_corridor(arm3)
    scene = CollisionScene(world, state)
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = arm3.sample_q(rng), arm3.sample_q(rng)
        assert scene.edge_valid(a, b, 0.02) == scene.edge_valid(b, a, 0.02)
        assert path_valid(scene, [a, b], 0.02) == path_valid(scene, [b, a], 0.02)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_shortcut_never_lengthens(arm3, seed):
    qa, qb, world, state = blocked_corridor(arm3)
    scene = CollisionScene(world, state)
    rng = np.random.default_rng(seed)
    # a valid but wasteful path: detour through random valid configurations
    path = [qa]
    while len(path) < 6:
        q = arm3.sample_q(rng)
        if scene.edge_valid(path[-1], q, 0.02):
            path.append(q)
    if not scene.edge_valid(path[-1], qb, 0.02):
        return
    path.append(qb)
    out = shortcut(path, scene, rng, 50, 0.02)
    assert path_length(out) <= path_length(path) + 1e-12
    assert path_valid(scene, out, 0.02)
    assert np.array_equal(out[0], qa) and np.array_equal(out[-1], qb)


def test_densify_spacing():
    path = densify([[0, 0], [1, 0], [1, 0.05]], 0.1)
    assert np.all(np.linalg.norm(np.diff(path, axis=0), axis=1) <= 0.1 + 1e-12)
    assert len(densify([[0, 0]], 0.1)) == 1


# --- three-phase planning and execution ------------------------------------------

def grasp_target(task, state):
    return compose(state.object_poses["nut"], task.expert[0][0].pose)


def test_offset_along_z():
    p = Pose((0.3, 0, 0.1), (0, 0, 1, 0))  # z axis points down
    assert np.allclose(offset_along_z(p, -0.05).translation, (0.3, 0, 0.15))
    assert DEFAULT_PLANNER.retreat_distance == 0.05 == DEFAULT_PLANNER.approach_distance


def test_motion_plan_spans_validated():
    w = np.zeros((4, 2))
    MotionPlan(w, [("retreat", 0, 1), ("transit", 1, 3), ("approach", 3, 4)])
    with pytest.raises(ValueError):
        MotionPlan(w, [("retreat", 0, 1), ("transit", 2, 4)])
    with pytest.raises(ValueError):
        MotionPlan(w, [("retreat", 0, 3)])


def test_three_phase_plan_structure(peg):
    state = reset(peg, "D0", np.random.default_rng(2))
    target = grasp_target(peg, state)
    plan = plan_three_phase(peg.world, state, target, np.random.default_rng(0), approach_object="nut")
    labels = [s[0] for s in plan.spans]
    assert labels == ["retreat", "transit", "approach"]
    assert len(plan.labels()) == len(plan)
    assert np.all(np.linalg.norm(np.diff(plan.waypoints, axis=0), axis=1) <= 0.1 + 1e-9)
    robot = peg.world.robot
    a, b = plan.spans[0][2] - 1, plan.spans[2][1]
    start_ee = state.ee_pose(robot)
    retreat_end = Pose.from_matrix(robot.fk_matrix(plan.waypoints[a]))
    approach_start = Pose.from_matrix(robot.fk_matrix(plan.waypoints[b - 1]))
    assert retreat_end.isclose(offset_along_z(start_ee, -0.05), 1e-3) or \
        pose_distance(retreat_end, offset_along_z(start_ee, -0.05))[0] < 1e-3
    assert pose_distance(approach_start, offset_along_z(target, -0.05))[0] < 1e-3
    assert pose_distance(Pose.from_matrix(robot.fk_matrix(plan.waypoints[-1])), target)[0] < 1e-3
    scene = CollisionScene(peg.world, state)
    mid = plan.waypoints[plan.spans[1][1] - 1:plan.spans[1][2] + 1]
    assert path_valid(scene, mid, 0.02)


def test_degenerate_plan_returns_to_start(peg):
    state = reset(peg, "fixed", np.random.default_rng(0))
    ee = state.ee_pose(peg.world.robot)
    plan = plan_three_phase(peg.world, state, ee, np.random.default_rng(0))
    end = Pose.from_matrix(peg.world.robot.fk_matrix(plan.waypoints[-1]))
    dp, dr = pose_distance(end, ee)
    assert dp < 1e-3 and dr < 1e-2


def test_transfer_keeps_held_object_clear(peg):
    robot = peg.world.robot
    state = reset(peg, "D0", np.random.default_rng(3))
    ee = state.ee_pose(robot)
    poses = dict(state.object_poses)
    poses["nut"] = ee
    held = WorldState(state.q, 0.04, poses, Attachment("nut", Pose()))
    target = compose(poses["peg"], peg.expert[1][0].pose)
    plan = plan_three_phase(peg.world, held, target, np.random.default_rng(1),
                            retreat_objects=["nut"], approach_object="peg")
    assert plan.spans[1][0] == "transfer"
    _, a, b = plan.spans[1]
    dense = densify(plan.waypoints[a - 1:b + 1], 0.02)
    for q in dense:
        s = WorldState(q, 0.04, {**poses, "nut": compose(Pose.from_matrix(robot.fk_matrix(q)), Pose())},
                       Attachment("nut", Pose()))
        assert not check_collision(peg.world, s)


def test_unreachable_target_propagates(peg):
    state = reset(peg, "fixed", np.random.default_rng(0))
    with pytest.raises(IkUnreachable):
        plan_three_phase(peg.world, state, Pose((3, 0, 0.2)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        plan_three_phase(peg.world, state, Pose((np.inf, 0, 0)), np.random.default_rng(0))


def test_execute_plan(peg):
    state = reset(peg, "D0", np.random.default_rng(4))
    target = grasp_target(peg, state)
    plan = plan_three_phase(peg.world, state, target, np.random.default_rng(0), approach_object="nut")
    final, steps, phases = execute_plan(peg.world, state, plan)
    robot = peg.world.robot
    end = Pose.from_matrix(robot.fk_matrix(plan.waypoints[-1]))
    dp, dr = pose_distance(final.ee_pose(robot), end)
    assert dp < 1e-3 and dr < math.radians(0.5)
    assert len(steps) == len(phases) >= len(plan) - 1
    assert set(phases) == {"retreat", "transit", "approach"}
    assert all(np.max(np.abs(s.action)) <= 1.0 for s in steps)
    assert final.object_poses == state.object_poses


def test_execute_single_waypoint_plan(peg):
    state = reset(peg, "fixed", np.random.default_rng(0))
    plan = MotionPlan(state.q[None], [("transit", 0, 1)])
    final, steps, phases = execute_plan(peg.world, state, plan)
    assert final == state and steps == [] and phases == []


def test_execute_rejects_foreign_plan(peg):
    state = reset(peg, "fixed", np.random.default_rng(0))
    far = np.array(state.q) + 1.0
    plan = MotionPlan(np.stack([far, far]), [("transit", 0, 2)])
    with pytest.raises(ExecutionFailure):
        execute_plan(peg.world, state, plan)
