"""Demonstration generation by object-centric adaptation and planned stitching.

Each attempt resets the task, and for every skill in the plan reads the
skill object's pose, re-anchors a source skill segment to it, reaches the
adapted initiation pose (planned, or interpolated in the baseline), then
replays the adapted actions with optional noise.  Only attempts that end in
task success are kept.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from skillgen.demos import (DatasetStats, Demonstration, SkillSegmentRecord, Step,
                            annotate_segments, skill_record_from_steps)
from skillgen.errors import (AttemptFailure, ConfigError, ExecutionFailure)
from skillgen.geometry import (Pose, RotationNoiseSpec, TranslationNoiseSpec, compose,
                               interpolate, pose_distance, quat_multiply, sample_pose_noise)
from skillgen.planner.phases import DEFAULT_PLANNER, PlannerConfig, execute_plan, plan_three_phase
from skillgen.world.model import CollisionScene, World, WorldState, manipulation_ignores
from skillgen.world.sim import (DEFAULT_CAPS, ControlCaps, Gripper, pose_delta, step_action,
                                step_joint_space)
from skillgen.world.task import TaskSpec, check_success, reset

log = logging.getLogger(__name__)

MODES = ("skillgen", "mimicgen_interp", "replay_noise")
_MASK64 = (1 << 64) - 1
RECOVERY_TOL = (1e-3, math.radians(0.5))  # (m, rad) a recovery must end within


def splitmix64(seed: int, index: int) -> int:
    """Per-attempt seed: one splitmix64 output for stream position `index`."""
    z = (seed * 0x9E3779B97F4A7C15 + (index + 1) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class GenerationConfig:
    mode: str = "skillgen"
    num_target_demos: int = 10
    action_noise_sigma: float = 0.05
    augment_initiation: bool = False
    aug_translation: TranslationNoiseSpec = field(default_factory=TranslationNoiseSpec)
    aug_rotation: RotationNoiseSpec = field(default_factory=RotationNoiseSpec)
    interp_steps: int = 5
    seed: int = 0
    max_attempts: Optional[int] = None  # default 50 x num_target_demos
    workers: int = 1
    planner: PlannerConfig = DEFAULT_PLANNER
    settle_ticks: int = 3  # extra ticks at the end of a recovery segment

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.action_noise_sigma < 0:
            raise ConfigError("action noise sigma must be >= 0")
        if self.interp_steps < 1:
            raise ConfigError("interp_steps must be >= 1")
        if self.num_target_demos < 0:
            raise ConfigError("num_target_demos must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def attempt_cap(self) -> int:
        return 50 * self.num_target_demos if self.max_attempts is None else self.max_attempts


@dataclass(frozen=True)
class AttemptOutcome:
    success: bool
    failure_cause: Optional[str]
    demo: Optional[Demonstration]
    seed: int
    failed_skill: Optional[int] = None
    message: str = ""

    def __post_init__(self):
        if self.success != (self.demo is not None) or self.success == (self.failure_cause is not None):
            raise ValueError("success, demo and failure_cause are inconsistent")


# --- building blocks --------------------------------------------------------

def sample_source_index(source: Sequence[Demonstration], rng: np.random.Generator) -> int:
    if not source:
        raise ConfigError("source dataset is empty")
    return int(rng.integers(len(source)))


def select_reference(source: Sequence[Demonstration], skill_index: int,
                     episode_choice: Optional[int], rng: np.random.Generator) -> SkillSegmentRecord:
    """Reference skill segment: the first skill picks a source demo uniformly,
    later skills reuse the same demo (`episode_choice`)."""
    if not source:
        raise ConfigError("source dataset is empty")
    if episode_choice is None:
        if skill_index != 0:
            raise ConfigError("later skills need the episode choice made for skill 0")
        episode_choice = sample_source_index(source, rng)
    skills = source[episode_choice].skills
    if skill_index >= len(skills):
        raise ConfigError(f"source demo {episode_choice} has no skill {skill_index}")
    return skills[skill_index]


def adapt_segment(ref: SkillSegmentRecord, new_object_pose: Pose):
    """(initiation pose, world-frame actions) re-anchored at `new_object_pose`."""
    init = compose(new_object_pose, ref.initiation_state_object_frame)
    return init, ref.world_actions(new_object_pose)


@dataclass(frozen=True)
class NoisyAction:
    target: Pose
    gripper: Gripper
    clean: np.ndarray  # normalized delta before noise (unclipped)
    noisy: np.ndarray  # clean + noise, before clipping
    action: np.ndarray  # what is executed: noisy clipped to [-1, 1]


def apply_action_noise(actions, current_pose: Callable[[], Pose], sigma: float,
                       rng: np.random.Generator, caps: ControlCaps = DEFAULT_CAPS) -> Iterator[NoisyAction]:
    """Turn absolute targets into noisy normalized deltas, lazily.

    The delta for each target is taken relative to the EE pose returned by
    `current_pose()` at the time the action is requested, so the caller
    must execute each action before asking for the next one.  Gripper
    commands pass through without noise.
    """
    for target, grip in actions:
        clean = pose_delta(current_pose(), target, caps)
        noisy = clean + sigma * rng.standard_normal(6)
        yield NoisyAction(target, Gripper(grip), clean, noisy, np.clip(noisy, -1.0, 1.0))


def noised_pose(pose: Pose, noise: Pose) -> Pose:
    """Translation noise in the world frame, rotation noise right-composed."""
    return Pose(pose.translation + noise.translation, quat_multiply(pose.rotation, noise.rotation))


def recovery_targets(start: Pose, goal: Pose, caps: ControlCaps = DEFAULT_CAPS,
                     settle: int = 3, margin: float = 0.8) -> list:
    """Dense interpolation from `start` to `goal` within the per-tick caps."""
    dt = np.max(np.abs(goal.translation - start.translation)) / caps.max_translation
    dr = pose_distance(start, goal)[1] / caps.max_rotation
    n = math.ceil(max(dt, dr) / margin - 1e-12)
    if n == 0:
        return []
    out = [(interpolate(start, goal, k / n), Gripper.HOLD) for k in range(1, n + 1)]
    return out + [(goal, Gripper.HOLD)] * settle


def augment_initiation(initiation_pose: Pose, t_spec: TranslationNoiseSpec,
                       r_spec: RotationNoiseSpec, rng: np.random.Generator, *,
                       caps: ControlCaps = DEFAULT_CAPS, settle: int = 3):
    """(noised initiation pose, recovery targets back to the original pose).

    Reachability and collisions of the noised pose are checked when the
    motion planner is asked to reach it.
    """
    noise = sample_pose_noise(rng, t_spec, r_spec)
    noised = noised_pose(initiation_pose, noise)
    if t_spec.half_width == 0 and r_spec.max_angle == 0:
        return initiation_pose, []
    return noised, recovery_targets(noised, initiation_pose, caps, settle)


# --- episode execution --------------------------------------------------------

class _Recorder:
    """Accumulates ticks, phase labels and skill boundaries for one episode."""

    def __init__(self, world: World, state: WorldState, horizon: int):
        self.world = world
        self.state = state
        self.horizon = horizon
        self.steps: list[Step] = []
        self.phases: list[str] = []
        self.boundaries: list[tuple[int, int]] = []
        self.objects: list[str] = []
        self.object_poses: list[Pose] = []
        self.records: list[SkillSegmentRecord] = []

    def ee(self) -> Pose:
        return self.state.ee_pose(self.world.robot)

    def add_motion(self, state: WorldState, steps, phases):
        self.state = state
        self.steps += steps
        self.phases += phases
        self._check_horizon()

    def _check_horizon(self):
        if len(self.steps) > self.horizon:
            raise _HorizonExceeded(f"episode exceeded the {self.horizon}-step horizon")

    def run_actions(self, actions: Iterator[NoisyAction], ignore, phase: str,
                    abort_on_collision: bool = True) -> list[Step]:
        """Execute normalized actions one tick at a time with collision abort."""
        out = []
        scene = None
        for act in actions:
            before = self.state
            ee_before = self.ee()
            self.state = step_action(self.world, before, act.action, act.gripper, current=ee_before)
            reached = self.ee()
            step = Step(before.q, ee_before, before.gripper_width, act.target, act.gripper,
                        act.action, reached)
            out.append(step)
            self.steps.append(step)
            self.phases.append(phase)
            if abort_on_collision:
                # a held body follows the EE inside the scene; rebuild on grasp/release
                if scene is None or self.state.attachment != before.attachment:
                    scene = CollisionScene(self.world, self.state, ignore)
                if scene.in_collision(self.state.q[None])[0]:
                    raise ExecutionFailure(f"collision during {phase} execution")
            self._check_horizon()
        return out


class _HorizonExceeded(Exception):
    pass


def _plan_and_execute(rec: _Recorder, goal: Pose, rng, config: GenerationConfig,
                      prev_obj: Optional[str], obj: str):
    plan = plan_three_phase(rec.world, rec.state, goal, rng,
                            retreat_objects=[prev_obj] if prev_obj else [],
                            approach_object=obj, config=config.planner)
    state, steps, phases = execute_plan(rec.world, rec.state, plan, step_size=config.planner.step_size)
    rec.add_motion(state, steps, phases)


def _interp_transit(rec: _Recorder, goal: Pose, steps: int, ignore):
    """Collision-blind linear/slerp stitching: one tick per waypoint."""
    start = rec.ee()
    targets = [(interpolate(start, goal, k / steps), Gripper.HOLD) for k in range(1, steps + 1)]
    acts = apply_action_noise(targets, rec.ee, 0.0, np.random.default_rng(0))
    # motion data is noise-free and never toggles the gripper
    rec.run_actions(acts, ignore, "interp")


def _run_skill(rec: _Recorder, k: int, obj: str, obj_pose: Pose, nominal_init: Pose,
               recovery: list, actions: list, sigma: float, rng):
    ignore = manipulation_ignores(rec.state, [obj])
    start = len(rec.steps)
    rec_steps = []
    if recovery:
        rec_steps = rec.run_actions(apply_action_noise(recovery, rec.ee, 0.0, rng), ignore, "skill")
        dt, dr = pose_distance(rec.ee(), nominal_init)
        if dt > RECOVERY_TOL[0] or dr > RECOVERY_TOL[1]:
            # e.g. a wrist joint ran into its limit on the way back
            raise ExecutionFailure(f"recovery segment ended {dt * 1000:.1f} mm / "
                                   f"{math.degrees(dr):.2f} deg from the initiation pose")
    skill_steps = rec.run_actions(apply_action_noise(actions, rec.ee, sigma, rng), ignore, "skill")
    steps = rec_steps + skill_steps
    rec.boundaries.append((start, len(rec.steps)))
    rec.objects.append(obj)
    rec.object_poses.append(obj_pose)
    rec.records.append(skill_record_from_steps(
        steps, obj_pose, k, obj, recovery_steps=len(rec_steps),
        nominal_initiation=nominal_init if recovery else None))


def _build_demo(task: TaskSpec, variant: str, initial: WorldState, rec: _Recorder,
                provenance: dict) -> Demonstration:
    demo = annotate_segments(rec.steps, rec.boundaries, rec.objects, rec.object_poses,
                             task=task.name, variant=variant, initial_state=initial,
                             final_state=rec.state, success=True, provenance=provenance,
                             phases=rec.phases)
    # keep the augmentation bookkeeping that annotation alone cannot recover
    segs = list(demo.segments)
    for i, record in enumerate(rec.records):
        segs[2 * i + 1] = record
    return replace(demo, segments=tuple(segs))


def _episode(task: TaskSpec, variant: str, state: WorldState, rng: np.random.Generator,
             config: GenerationConfig, skill_source: Callable, provenance: dict,
             transit: str) -> Demonstration:
    """Shared generation loop; `skill_source(k, obj_pose)` yields the adapted skill."""
    world = task.world
    rec = _Recorder(world, state, task.horizon)
    prev_obj = None
    for k, step in enumerate(task.skill_plan):
        # ground-truth object pose, read once at the start of the skill
        obj_pose = rec.state.object_poses[step.object]
        init, actions, sigma = skill_source(k, obj_pose)
        goal, recovery = init, []
        if config.augment_initiation:
            goal, recovery = augment_initiation(init, config.aug_translation, config.aug_rotation,
                                                rng, settle=config.settle_ticks)
        if transit == "plan":
            _plan_and_execute(rec, goal, rng, config, prev_obj, step.object)
        else:
            ignore = manipulation_ignores(rec.state, [o for o in (prev_obj, step.object) if o])
            _interp_transit(rec, goal, config.interp_steps, ignore)
        _run_skill(rec, k, step.object, obj_pose, init, recovery, actions, sigma, rng)
        prev_obj = step.object
    demo = _build_demo(task, variant, state, rec, provenance)
    if not check_success(task, rec.state):
        raise _TaskFailure(k)
    return demo


class _TaskFailure(Exception):
    def __init__(self, skill_index):
        super().__init__("final state does not satisfy the task's success predicate")
        self.skill_index = skill_index


def generate_one(task: TaskSpec, variant: str, source: Sequence[Demonstration],
                 config: GenerationConfig, rng: np.random.Generator, seed: int = 0) -> AttemptOutcome:
    """One rejection-sampling attempt; every failure maps to a cause."""
    if not source:
        raise ConfigError("source dataset is empty")
    skill_no = [0]

    if config.mode == "replay_noise":
        src_variant = source[0].variant
        if variant != src_variant:
            raise ConfigError(f"replay-noise can only regenerate the source variant "
                              f"'{src_variant}', not '{variant}'")
        idx = sample_source_index(source, rng)
        state = source[idx].initial_state
        task.variant(variant)
    else:
        task.variant(variant)
        idx = None
        state = reset(task, variant, rng)

    choice = {}

    def skill_source(k, obj_pose):
        skill_no[0] = k
        if k == 0:
            choice["idx"] = idx if idx is not None else sample_source_index(source, rng)
        ref = select_reference(source, k, choice["idx"], rng)
        if config.mode == "replay_noise":
            # same scene as the source: replay its world-frame actions directly
            init = compose(ref.object_pose_at_start, ref.initiation_state_object_frame)
            return init, ref.world_actions(), config.action_noise_sigma
        init, actions = adapt_segment(ref, obj_pose)
        return init, actions, config.action_noise_sigma

    transit = "interp" if config.mode == "mimicgen_interp" else "plan"
    provenance = {"kind": "generated", "mode": config.mode, "seed": int(seed)}
    try:
        demo = _episode(task, variant, state, rng, config, skill_source, provenance, transit)
    except AttemptFailure as exc:
        return AttemptOutcome(False, exc.cause, None, seed, skill_no[0], str(exc))
    except _HorizonExceeded as exc:
        return AttemptOutcome(False, "task_failure", None, seed, skill_no[0], str(exc))
    except _TaskFailure as exc:
        return AttemptOutcome(False, "task_failure", None, seed, exc.skill_index, str(exc))
    demo = replace(demo, provenance={**demo.provenance, "source_index": choice["idx"]})
    return AttemptOutcome(True, None, demo, seed)


# --- scripted expert ------------------------------------------------------------

def expert_actions(task: TaskSpec, k: int, obj_pose: Pose):
    """(initiation pose, world-frame targets) from the task's keyframe script."""
    frames = task.expert[k]
    init = compose(obj_pose, frames[0].pose)
    out, prev = [], frames[0].pose
    for kf in frames[1:]:
        for j in range(1, kf.steps + 1):
            p = interpolate(prev, kf.pose, j / kf.steps)
            out.append((compose(obj_pose, p), kf.gripper if j == kf.steps else Gripper.HOLD))
        prev = kf.pose
    return init, out


def record_expert_demo(task: TaskSpec, variant: str, rng: np.random.Generator, *,
                       seed: int = 0, config: Optional[GenerationConfig] = None) -> Demonstration:
    """Run the task's keyframe script once; raises AttemptFailure on failure."""
    if not task.expert:
        raise ConfigError(f"task '{task.name}' ships no expert script")
    config = config or GenerationConfig(action_noise_sigma=0.0)
    state = reset(task, variant, rng)
    provenance = {"kind": "source", "seed": int(seed)}

    def skill_source(k, obj_pose):
        init, acts = expert_actions(task, k, obj_pose)
        return init, acts, 0.0

    try:
        return _episode(task, variant, state, rng, replace(config, augment_initiation=False),
                        skill_source, provenance, "plan")
    except _TaskFailure as exc:
        raise ExecutionFailure(f"expert script did not solve the task: {exc}") from None
    except _HorizonExceeded as exc:
        raise ExecutionFailure(str(exc)) from None


def record_source(task: TaskSpec, variant: str, n: int, seed: int = 0) -> list[Demonstration]:
    demos = []
    for i in range(n):
        s = splitmix64(seed, i)
        try:
            demos.append(record_expert_demo(task, variant, np.random.default_rng(s), seed=s))
        except AttemptFailure as exc:
            raise ExecutionFailure(f"expert episode {i} failed: {exc}") from None
    return demos


def replay_demo(task: TaskSpec, demo: Demonstration) -> WorldState:
    """Re-execute a stored demonstration tick by tick from its initial state.

    Planned motion steps are replayed as joint commands (the next logged
    configuration), everything else as the stored normalized action.
    Returns the final state.
    """
    world = task.world
    state = demo.initial_state
    steps = demo.flat_steps()
    kinds = []
    for seg in demo.segments:
        if isinstance(seg, SkillSegmentRecord):
            kinds += ["action"] * len(seg.steps)
        else:
            kinds += ["action" if ph == "interp" else "joint" for ph in seg.phases]
    for i, (step, kind) in enumerate(zip(steps, kinds)):
        if kind == "joint":
            nxt = steps[i + 1].q if i + 1 < len(steps) else demo.final_state.q
            state = step_joint_space(world, state, nxt)
        else:
            state = step_action(world, state, step.action, step.gripper)
    return state


# --- dataset generation -----------------------------------------------------------

_WORKER: dict = {}


def _worker_init(task, variant, source, config):
    _WORKER.update(task=task, variant=variant, source=source, config=config)


def _worker_attempt(i: int) -> AttemptOutcome:
    w = _WORKER
    return _attempt(w["task"], w["variant"], w["source"], w["config"], i)


def _attempt(task, variant, source, config, i) -> AttemptOutcome:
    seed = splitmix64(config.seed, i)
    out = generate_one(task, variant, source, config, np.random.default_rng(seed), seed)
    if out.demo is not None:
        out = replace(out, demo=replace(out.demo, provenance={**out.demo.provenance, "attempt": i}))
    return out


def generate_dataset(task: TaskSpec, variant: str, source: Sequence[Demonstration],
                     config: GenerationConfig, progress: Optional[Callable] = None):
    """Run attempts in seed order until enough successes or the attempt cap.

    Attempts are evaluated in index order (speculatively in chunks when
    workers > 1) and consumed in that same order, so the result does not
    depend on the worker count.  Returns (demos, stats); stats.complete is
    False when the cap was hit first.
    """
    source = list(source)
    if config.mode == "replay_noise" and source and variant != source[0].variant:
        raise ConfigError(f"replay-noise can only regenerate the source variant "
                          f"'{source[0].variant}', not '{variant}'")
    task.variant(variant)
    if config.num_target_demos > 0 and not source:
        raise ConfigError("source dataset is empty")
    stats = DatasetStats()
    demos: list[Demonstration] = []
    cap = config.attempt_cap

    def consume(out: AttemptOutcome) -> bool:
        stats.record(out.failure_cause, out.failed_skill)
        if out.success:
            demos.append(out.demo)
        if progress is not None:
            progress(stats)
        return len(demos) >= config.num_target_demos or stats.attempts >= cap

    if config.num_target_demos == 0 or cap == 0:
        stats.complete = config.num_target_demos == 0
        return demos, stats
    if config.workers == 1:
        i = 0
        while not consume(_attempt(task, variant, source, config, i)):
            i += 1
    else:
        with ProcessPoolExecutor(config.workers, initializer=_worker_init,
                                 initargs=(task, variant, source, config)) as pool:
            i, done = 0, False
            while not done:
                need = config.num_target_demos - len(demos)
                chunk = min(cap - i, max(config.workers, 2 * need))
                for out in pool.map(_worker_attempt, range(i, i + chunk)):
                    if consume(out):
                        done = True
                        break
                i += chunk
    stats.complete = len(demos) >= config.num_target_demos
    if not stats.complete:
        log.warning("attempt cap %d reached with %d/%d demos", cap, len(demos),
                    config.num_target_demos)
    stats.check()
    return demos, stats


def generate_mimicgen_baseline(task, variant, source, config: GenerationConfig):
    return generate_dataset(task, variant, source, replace(config, mode="mimicgen_interp"))


def generate_replay_noise_baseline(task, variant, source, config: GenerationConfig):
    return generate_dataset(task, variant, source, replace(config, mode="replay_noise"))
