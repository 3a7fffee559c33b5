import math

import numpy as np
import pytest
from scipy import stats as sps

from skillgen.datagen import (AttemptOutcome, GenerationConfig, adapt_segment,
                              apply_action_noise, augment_initiation, generate_dataset,
                              generate_one, record_source, recovery_targets, replay_demo,
                              select_reference, splitmix64)
from skillgen.demos import DatasetStats, MotionSegment, dataset_lines, to_object_frame
from skillgen.errors import ConfigError
from skillgen.geometry import (Pose, RotationNoiseSpec, TranslationNoiseSpec, compose,
                               pose_distance)
from skillgen.world.sim import Gripper, step_action
from skillgen.world.task import check_success, load_task, reset, task_from_dict
from conftest import peg_dict, random_pose

FIXED = {"nut": {"low": [0.33, 0.17, 0.02], "high": [0.33, 0.17, 0.02]},
         "peg": {"low": [0.33, -0.17, 0.052], "high": [0.33, -0.17, 0.052]}}


def task_with(variant=None, obstacles=()):
    d = peg_dict()
    d["obstacles"] += list(obstacles)
    if variant:
        d["variants"]["custom"] = variant
    return task_from_dict(d)


def test_splitmix_is_deterministic_and_spread():
    assert splitmix64(0, 0) == splitmix64(0, 0)
    seeds = {splitmix64(s, i) for s in range(5) for i in range(200)}
    assert len(seeds) == 1000
    assert all(0 <= s < 2 ** 64 for s in seeds)


def test_select_reference_contract(peg_source):
    rng = np.random.default_rng(0)
    assert all(select_reference(peg_source[:1], 0, None, rng) is peg_source[0].skills[0]
               for _ in range(20))
    assert select_reference(peg_source, 1, 2, rng) is peg_source[2].skills[1]
    with pytest.raises(ConfigError):
        select_reference([], 0, None, rng)
    with pytest.raises(ConfigError):
        select_reference(peg_source, 1, None, rng)


def test_select_reference_is_uniform(peg_source):
    rng = np.random.default_rng(11)
    ids = {id(d.skills[0]): i for i, d in enumerate(peg_source)}
    n = 10_000
    counts = np.bincount([ids[id(select_reference(peg_source, 0, None, rng))] for _ in range(n)],
                         minlength=10)
    sigma = math.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n / 10) < 3 * sigma)
    assert sps.chisquare(counts).pvalue > 1e-3


def test_adapt_segment_examples(peg_source):
    ref = peg_source[0].skills[0]
    init, acts = adapt_segment(ref, ref.object_pose_at_start)
    assert init.isclose(ref.steps[0].ee, atol=1e-9)
    for (a, g), (b, h) in zip(acts, ref.world_actions()):
        assert a.isclose(b, atol=1e-9) and g == h
    # a pure translation of an identity-rotation anchor shifts every pose exactly
    flat = to_object_frame(ref.world_actions(), Pose(ref.object_pose_at_start.translation))
    moved = Pose(flat.object_pose_at_start.translation + (0.1, 0, 0))
    for (a, _), (b, _) in zip(adapt_segment(flat, moved)[1], flat.world_actions()):
        assert np.allclose(a.translation - b.translation, (0.1, 0, 0), atol=1e-12)
        assert np.allclose(a.rotation, b.rotation, atol=1e-12)


def test_adapt_segment_round_trip_and_equivariance(peg_source):
    rng = np.random.default_rng(1)
    ref = peg_source[3].skills[1]
    for _ in range(50):
        new, g = random_pose(rng), random_pose(rng)
        init, acts = adapt_segment(ref, new)
        back = to_object_frame(acts, new)
        for (a, _), (b, _) in zip(back.actions_object_frame, ref.actions_object_frame):
            assert a.isclose(b, atol=1e-9)
        init_g, acts_g = adapt_segment(ref, compose(g, new))
        assert init_g.isclose(compose(g, init), atol=1e-9)
        for (a, _), (b, _) in zip(acts_g, acts):
            assert a.isclose(compose(g, b), atol=1e-9)


def test_action_noise_std():
    rng = np.random.default_rng(2)
    n = 100_000
    here = Pose((0.3, 0, 0.2))
    targets = [(Pose((0.3, 0.01, 0.2)), Gripper.HOLD)] * n
    acts = list(apply_action_noise(targets, lambda: here, 0.05, rng))
    diff = np.array([a.noisy - a.clean for a in acts])
    assert np.all(np.abs(diff.std(axis=0) / 0.05 - 1) < 0.05)
    assert all(np.all(np.abs(a.action) <= 1) for a in acts[:1000])
    assert all(a.gripper == Gripper.HOLD for a in acts[:10])


def test_zero_noise_replays_targets(peg):
    state = reset(peg, "fixed", np.random.default_rng(0))
    robot = peg.world.robot
    start = state.ee_pose(robot)
    targets = [(Pose(start.translation + (0, 0.01 * k, -0.005 * k), start.rotation), Gripper.HOLD)
               for k in range(1, 8)]
    box = {"s": state}
    for act in apply_action_noise(targets, lambda: box["s"].ee_pose(robot), 0.0,
                                  np.random.default_rng(0)):
        assert np.array_equal(act.clean, act.noisy)
        box["s"] = step_action(peg.world, box["s"], act.action, act.gripper)
        dt, dr = pose_distance(box["s"].ee_pose(robot), act.target)
        assert dt < 1e-3 and dr < math.radians(0.5)


def test_augment_zero_specs_and_recovery(peg):
    rng = np.random.default_rng(3)
    pose = Pose((0.3, 0.1, 0.1), (0, 0, 1, 0))
    noised, rec = augment_initiation(pose, TranslationNoiseSpec(0), RotationNoiseSpec(0), rng)
    assert noised == pose and rec == []
    for _ in range(20):
        noised, rec = augment_initiation(pose, TranslationNoiseSpec(), RotationNoiseSpec(), rng)
        assert np.all(np.abs(noised.translation - pose.translation) <= 0.08)
        assert pose_distance(noised, pose)[1] <= math.radians(80) + 1e-12
        assert rec[-1][0] == pose and all(g == Gripper.HOLD for _, g in rec)
    assert recovery_targets(pose, pose) == []


def test_generate_one_is_deterministic(peg, peg_source):
    cfg = GenerationConfig(seed=0)
    a = generate_one(peg, "D0", peg_source, cfg, np.random.default_rng(7), 7)
    b = generate_one(peg, "D0", peg_source, cfg, np.random.default_rng(7), 7)
    assert a == b and a.success
    assert list(dataset_lines([a.demo], DatasetStats())) == list(dataset_lines([b.demo], DatasetStats()))
    assert check_success(peg, a.demo.final_state)
    assert a.demo.provenance["source_index"] in range(len(peg_source))


def test_caged_object_is_plan_failure(peg_source):
    cage = {"name": "cage", "shape": {"type": "box", "half_extents": [0.06, 0.06, 0.06]},
            "pose": [0.33, 0.17, 0.03, 1, 0, 0, 0]}
    task = task_with(FIXED, [cage])
    out = generate_one(task, "custom", peg_source, GenerationConfig(), np.random.default_rng(0))
    assert not out.success and out.failure_cause == "plan_failure" and out.failed_skill == 0


def test_interp_through_wall_aborts_on_collision(peg_source):
    variant = dict(FIXED, wall={"low": [0.33, 0.0, 0.09], "high": [0.33, 0.0, 0.09]})
    task = task_with(variant)
    cfg = GenerationConfig(mode="mimicgen_interp", action_noise_sigma=0.0)
    out = generate_one(task, "custom", peg_source, cfg, np.random.default_rng(0))
    assert out.failure_cause == "execution_failure" and out.failed_skill == 1
    cfg = GenerationConfig(action_noise_sigma=0.0)
    assert generate_one(task, "custom", peg_source, cfg, np.random.default_rng(0)).success


def test_baseline_modes(peg, peg_source):
    demos, st = generate_dataset(peg, "D0", peg_source,
                                 GenerationConfig(mode="replay_noise", num_target_demos=5,
                                                  action_noise_sigma=0.0, seed=2))
    assert st.generation_rate == 1.0 and len(demos) == 5
    for d in demos:
        assert d.initial_state in [s.initial_state for s in peg_source]
    with pytest.raises(ConfigError):
        generate_dataset(peg, "D1", peg_source, GenerationConfig(mode="replay_noise"))
    demos, st = generate_dataset(peg, "D0", peg_source,
                                 GenerationConfig(mode="mimicgen_interp", num_target_demos=5,
                                                  interp_steps=30, seed=2))
    assert st.generation_rate == 1.0
    assert all(p == "interp" for d in demos for m in d.motions for p in m.phases)


def test_dataset_edge_cases(peg, peg_source):
    demos, st = generate_dataset(peg, "D0", peg_source, GenerationConfig(num_target_demos=0))
    assert demos == [] and st.attempts == 0 and st.complete
    demos, st = generate_dataset(peg, "D0", peg_source,
                                 GenerationConfig(num_target_demos=5, max_attempts=2))
    assert st.attempts == 2 and not st.complete and len(demos) <= 2
    with pytest.raises(ConfigError):
        generate_dataset(peg, "D0", [], GenerationConfig(num_target_demos=1))
    with pytest.raises(ConfigError):
        GenerationConfig(action_noise_sigma=-1)
    with pytest.raises(ConfigError):
        GenerationConfig(interp_steps=0)
    with pytest.raises(ConfigError):
        GenerationConfig(mode="bogus")
    with pytest.raises(ValueError):
        AttemptOutcome(True, None, None, 0)


def test_generated_dataset_invariants(peg, peg_source):
    demos, st = generate_dataset(peg, "D0", peg_source,
                                 GenerationConfig(num_target_demos=6, seed=4))
    assert st.attempts == st.successes + sum(st.failures.values())
    assert st.generation_rate == st.successes / st.attempts
    for i, d in enumerate(demos):
        assert d.success and check_success(peg, d.final_state)
        assert [s.object for s in d.skills] == ["nut", "peg"]
        assert all(isinstance(m, MotionSegment) for m in d.motions)
        assert d.provenance["attempt"] >= i
        assert replay_demo(peg, d) == d.final_state


def test_augmented_dataset_contract(peg, peg_source):
    cfg = GenerationConfig(num_target_demos=6, augment_initiation=True, seed=3)
    demos, _ = generate_dataset(peg, "D0", peg_source, cfg)
    for d in demos:
        for s in d.skills:
            assert s.recovery_steps > 0 and s.labels == ("skill",) * len(s.steps)
            init = compose(s.object_pose_at_start, s.initiation_state_object_frame)
            nominal = compose(s.object_pose_at_start, s.nominal_initiation_object_frame)
            # the stored initiation is the noised pose the robot actually reached
            assert init.isclose(s.steps[0].ee, atol=1e-9)
            assert np.all(np.abs(init.translation - nominal.translation) <= 0.08 + 1e-4)
            assert pose_distance(init, nominal)[1] <= math.radians(80.01)
            dt, dr = pose_distance(s.steps[s.recovery_steps - 1].reached, nominal)
            assert dt < 1e-3 and dr < math.radians(0.5)


def test_parallel_matches_serial(peg, peg_source):
    cfg = GenerationConfig(num_target_demos=4, seed=9)
    serial = generate_dataset(peg, "D0", peg_source, cfg)
    par = generate_dataset(peg, "D0", peg_source, GenerationConfig(num_target_demos=4, seed=9,
                                                                    workers=2))
    assert list(dataset_lines(*serial)) == list(dataset_lines(*par))


def test_record_source_reproducible(peg):
    a = record_source(peg, "D0", 2, seed=4)
    assert list(dataset_lines(a, DatasetStats())) == list(dataset_lines(record_source(peg, "D0", 2, seed=4), DatasetStats()))
    with pytest.raises(ConfigError):
        load_task("stack").variant("nope")
