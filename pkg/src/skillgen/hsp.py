"""Hybrid skill policies: plan to a predicted initiation pose, then act.

Each skill bundles an initiation predictor, a control policy and a
termination predictor.  The learned components here are non-neural
stand-ins (nearest neighbour over simple pose features) behind small
interfaces, so that trained networks could replace them one at a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from skillgen.datagen import NoisyAction, _HorizonExceeded, _Recorder, _interp_transit, splitmix64
from skillgen.demos import Demonstration, MotionSegment, SkillSegmentRecord, annotate_segments
from skillgen.errors import AttemptFailure, ConfigError, DatasetError, ObservabilityError, SkillTimeout
from skillgen.geometry import Pose, compose, inverse, pose_distance
from skillgen.planner.phases import DEFAULT_PLANNER, PlannerConfig, execute_plan, plan_three_phase
from skillgen.world.model import World, WorldState, manipulation_ignores
from skillgen.world.sim import Gripper, pose_delta
from skillgen.world.task import TaskSpec, check_success, reset

ROT_SCALE = 0.05  # meters per unit of the 6-D rotation feature
VOTES_REQUIRED = 5


# --- observations ------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    """What every predictor may see: EE, gripper, episode-start object poses."""

    ee_pose: Pose
    gripper_width: float
    object_poses_at_episode_start: dict


@dataclass(frozen=True)
class FullObservation(Observation):
    """Adds current object poses (HSP-Class and oracle modes only)."""

    current_object_poses: dict = field(default_factory=dict)


def observe(state: WorldState, world: World, start_poses: dict, full: bool) -> Observation:
    ee = state.ee_pose(world.robot)
    if full:
        return FullObservation(ee, state.gripper_width, start_poses, dict(state.object_poses))
    return Observation(ee, state.gripper_width, start_poses)


def rot6d(pose: Pose) -> np.ndarray:
    """First two rotation-matrix columns, a continuous 6-D rotation code."""
    return pose.rotation_matrix[:, :2].T.reshape(6)


def from_rot6d(v) -> np.ndarray:
    """Gram-Schmidt decode of the 6-D rotation code into a rotation matrix."""
    a, b = np.asarray(v[:3], dtype=float), np.asarray(v[3:6], dtype=float)
    x = a / np.linalg.norm(a)
    b = b - x * (x @ b)
    y = b / np.linalg.norm(b)
    return np.column_stack([x, y, np.cross(x, y)])


def pose_features(pose: Pose) -> np.ndarray:
    return np.concatenate([pose.translation, ROT_SCALE * rot6d(pose)])


# --- training labels -----------------------------------------------------------

def motion_labels(n: int) -> list[int]:
    """0 for the first floor(n/2) steps, 1 for the last ceil(n/2)."""
    return [0] * (n // 2) + [1] * (n - n // 2)


def build_training_labels(dataset: Sequence[Demonstration]) -> dict:
    """Per-step skill-active labels plus initiation and class records.

    Returns {"steps": [(demo, step, label)], "initiation": [...],
    "classes": [...]}.  Initiation records pair the EE pose at the end of
    the previous skill (or the episode start) with the stored initiation
    pose; class records pair the skill object's pose with the source demo
    index.
    """
    steps, inits, classes = [], [], []
    for d_i, demo in enumerate(dataset):
        if not demo.segments:
            raise DatasetError(f"demo {d_i} has no labelled segments")
        t = 0
        for seg in demo.segments:
            if isinstance(seg, MotionSegment):
                labs = motion_labels(len(seg.steps))
            elif isinstance(seg, SkillSegmentRecord):
                labs = [1] * len(seg.steps)
            else:
                raise DatasetError(f"demo {d_i} has an unlabelled segment")
            for lab in labs:
                steps.append((d_i, t, lab))
                t += 1
        start = demo.initial_state.object_poses
        for seg_i, seg in enumerate(demo.segments):
            if isinstance(seg, SkillSegmentRecord):
                # observation when the previous skill ended, i.e. before the motion
                motion = demo.segments[seg_i - 1]
                ee_before = motion.steps[0].ee if motion.steps else seg.steps[0].ee
                target = compose(seg.object_pose_at_start, seg.initiation_state_object_frame)
                inits.append({"demo": d_i, "skill": seg.skill_index, "ee": ee_before,
                              "start_poses": start, "target": target})
                classes.append({"demo": d_i, "skill": seg.skill_index,
                                "object_pose": seg.object_pose_at_start,
                                "label": int(demo.provenance.get("source_index", 0))})
    return {"steps": steps, "initiation": inits, "classes": classes}


def step_label_count(demo: Demonstration) -> int:
    """Oracle count: skill steps plus ceil(n/2) of every motion segment."""
    total = 0
    for seg in demo.segments:
        n = len(seg.steps)
        total += n if isinstance(seg, SkillSegmentRecord) else (n + 1) // 2
    return total


# --- initiation predictors ------------------------------------------------------

class InitiationPredictor:
    full_observation = False

    def predict(self, obs: Observation, skill_index: int) -> Pose:
        raise NotImplementedError


class OracleInitiation(InitiationPredictor):
    """Ground-truth adaptation of a fixed source demo's initiation state."""

    full_observation = True

    def __init__(self, source: Sequence[Demonstration], source_index: int = 0):
        self.inits = [s.initiation_state_object_frame for s in source[source_index].skills]
        self.objects = [s.object for s in source[source_index].skills]

    def predict(self, obs: Observation, skill_index: int) -> Pose:
        if not isinstance(obs, FullObservation):
            raise ObservabilityError("oracle initiation needs current object poses")
        obj = obs.current_object_poses[self.objects[skill_index]]
        return compose(obj, self.inits[skill_index])


class HspClass(InitiationPredictor):
    """Classify the source demo from the skill object's pose, then re-adapt.

    The classifier is 1-nearest-neighbour over the object pose features of
    the training records.
    """

    full_observation = True

    def __init__(self, dataset: Sequence[Demonstration], source: Sequence[Demonstration]):
        if not source:
            raise ConfigError("HSP-Class needs the source dataset")
        self.source = list(source)
        recs = build_training_labels(dataset)["classes"] if dataset else []
        self.objects = [s.object for s in self.source[0].skills]
        self.trees, self.labels = {}, {}
        for k in range(len(self.objects)):
            # labels naming demos outside this source set cannot be re-adapted
            rows = [r for r in recs if r["skill"] == k and r["label"] < len(self.source)]
            if rows:
                self.trees[k] = cKDTree(np.array([pose_features(r["object_pose"]) for r in rows]))
                self.labels[k] = np.array([r["label"] for r in rows])

    def classify(self, obs: Observation, skill_index: int) -> int:
        if not isinstance(obs, FullObservation):
            raise ObservabilityError("HSP-Class needs current object poses")
        if skill_index not in self.trees:
            return 0
        obj = obs.current_object_poses[self.objects[skill_index]]
        _, i = self.trees[skill_index].query(pose_features(obj))
        return int(self.labels[skill_index][i])

    def predict(self, obs: Observation, skill_index: int) -> Pose:
        idx = self.classify(obs, skill_index)
        obj = obs.current_object_poses[self.objects[skill_index]]
        return compose(obj, self.source[idx].skills[skill_index].initiation_state_object_frame)


def hsp_class_predict(predictor: HspClass, observation: Observation, skill_index: int = 0) -> Pose:
    return predictor.predict(observation, skill_index)


class MinMaxNormalizer:
    """Per-dimension affine map of the training range onto [-1, 1]."""

    def __init__(self, data: np.ndarray):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        self.lo = data.min(axis=0)
        self.hi = data.max(axis=0)

    @property
    def span(self) -> np.ndarray:
        return np.where(self.hi - self.lo > 1e-12, self.hi - self.lo, 1.0)

    def encode(self, x) -> np.ndarray:
        return 2.0 * (np.asarray(x, dtype=float) - self.lo) / self.span - 1.0

    def decode(self, z) -> np.ndarray:
        return (np.asarray(z, dtype=float) + 1.0) / 2.0 * self.span + self.lo


class HspReg(InitiationPredictor):
    """Regress the initiation pose from episode-start object poses and the EE.

    k-nearest-neighbour regression on normalized targets (position plus
    6-D rotation).  With k = 1 the stored pose is returned unchanged.
    """

    full_observation = False

    def __init__(self, dataset: Sequence[Demonstration], k: int = 1):
        self.k = k
        recs = build_training_labels(dataset)["initiation"] if dataset else []
        self.names = sorted(dataset[0].initial_state.object_poses) if dataset else []
        self.models = {}
        for skill in sorted({r["skill"] for r in recs}):
            rows = [r for r in recs if r["skill"] == skill]
            x = np.array([self._features(r["start_poses"], r["ee"]) for r in rows])
            y = np.array([np.concatenate([r["target"].translation, rot6d(r["target"])]) for r in rows])
            xn, yn = MinMaxNormalizer(x), MinMaxNormalizer(y)
            self.models[skill] = {"tree": cKDTree(xn.encode(x)), "x": xn, "y": yn,
                                  "targets": yn.encode(y), "poses": [r["target"] for r in rows]}

    def _features(self, start_poses: dict, ee: Pose) -> np.ndarray:
        parts = [pose_features(start_poses[n]) for n in self.names]
        return np.concatenate(parts + [pose_features(ee)])

    def predict(self, obs: Observation, skill_index: int) -> Pose:
        if skill_index not in self.models:
            raise ConfigError(f"HSP-Reg has no training data for skill {skill_index}")
        m = self.models[skill_index]
        x = m["x"].encode(self._features(obs.object_poses_at_episode_start, obs.ee_pose))
        k = min(self.k, len(m["poses"]))
        _, idx = m["tree"].query(x, k=k)
        if k == 1:
            return m["poses"][int(idx)]
        y = m["y"].decode(m["targets"][np.atleast_1d(idx)].mean(axis=0))
        return Pose.from_matrix(_homogeneous(from_rot6d(y[3:]), y[:3]))


def hsp_reg_predict(predictor: HspReg, observation: Observation, skill_index: int = 0) -> Pose:
    return predictor.predict(observation, skill_index)


def _homogeneous(r: np.ndarray, t) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = t
    return m


# --- termination predictors ------------------------------------------------------

class ConsecutiveVotes:
    """Accept termination only after `required` consecutive positive votes."""

    def __init__(self, required: int = VOTES_REQUIRED):
        if required < 1:
            raise ValueError("required votes must be >= 1")
        self.required = required
        self.run = 0

    def reset(self):
        self.run = 0

    def update(self, vote: bool) -> bool:
        self.run = self.run + 1 if vote else 0
        return self.run >= self.required


def first_accepted(votes: Sequence[int], required: int = VOTES_REQUIRED) -> Optional[int]:
    """1-based index of the vote at which termination is accepted, or None."""
    rule = ConsecutiveVotes(required)
    for i, v in enumerate(votes, start=1):
        if rule.update(bool(v)):
            return i
    return None


class TerminationPredictor:
    required_votes = 1

    def vote(self, obs: Observation, skill_index: int, anchor: Pose) -> bool:
        raise NotImplementedError


class OracleTermination(TerminationPredictor):
    """Object-frame distance to the stored termination state, plus gripper.

    The gripper must also be in the state the source skill leaves it in
    (open or closed), which separates e.g. the pre-grasp from the lift.
    """

    required_votes = 1

    def __init__(self, source: Sequence[Demonstration], source_index: int = 0, *,
                 max_width: float = 0.08, pos_tol: float = 0.02,
                 rot_tol: float = np.radians(10.0), width_tol: float = 1e-3):
        skills = source[source_index].skills
        self.terms = [s.termination_state_object_frame for s in skills]
        self.want_open = [self._ends_open(s) for s in skills]
        self.max_width = max_width
        self.pos_tol, self.rot_tol, self.width_tol = pos_tol, rot_tol, width_tol

    @staticmethod
    def _ends_open(seg: SkillSegmentRecord) -> Optional[bool]:
        cmds = [Gripper(g) for _, g in seg.actions_object_frame if Gripper(g) is not Gripper.HOLD]
        return None if not cmds else cmds[-1] is Gripper.OPEN

    def vote(self, obs: Observation, skill_index: int, anchor: Pose) -> bool:
        rel = compose(inverse(anchor), obs.ee_pose)
        dp, dr = pose_distance(rel, self.terms[skill_index])
        if dp >= self.pos_tol or dr >= self.rot_tol:
            return False
        want = self.want_open[skill_index]
        if want is None:
            return True
        return (obs.gripper_width >= self.max_width - self.width_tol) == want


class LearnedTermination(TerminationPredictor):
    """k-NN "skill running" classifier; votes to stop when it says no.

    Features are the EE pose in the skill object's episode-start frame and
    the gripper width.  Records come from the skill segment, the motion
    segments around it (with the half-flip labels) and, for the last
    skill, the final state as a stop example.
    """

    required_votes = VOTES_REQUIRED

    def __init__(self, dataset: Sequence[Demonstration], k: int = 5):
        self.k = k
        self.models = {}
        per_skill: dict = {}
        for demo in dataset:
            segs = demo.segments
            n_skills = len(segs) // 2
            for k_i in range(n_skills):
                skill = segs[2 * k_i + 1]
                anchor_inv = inverse(demo.initial_state.object_poses[skill.object])
                rows = per_skill.setdefault(k_i, ([], []))
                before = segs[2 * k_i]
                for s, lab in zip(before.steps, motion_labels(len(before.steps))):
                    rows[0].append(self._feat(anchor_inv, s.ee, s.gripper_width))
                    rows[1].append(lab)
                for s in skill.steps:
                    rows[0].append(self._feat(anchor_inv, s.ee, s.gripper_width))
                    rows[1].append(1)
                if 2 * k_i + 2 < len(segs):
                    after = segs[2 * k_i + 2]
                    for s, lab in zip(after.steps, motion_labels(len(after.steps))):
                        rows[0].append(self._feat(anchor_inv, s.ee, s.gripper_width))
                        rows[1].append(lab)
                elif demo.final_state is not None and skill.steps:
                    last = skill.steps[-1]
                    rows[0].append(self._feat(anchor_inv, last.reached, demo.final_state.gripper_width))
                    rows[1].append(0)
        for k_i, (x, y) in per_skill.items():
            self.models[k_i] = (cKDTree(np.array(x)), np.array(y))

    @staticmethod
    def _feat(anchor_inv: Pose, ee: Pose, width: float) -> np.ndarray:
        return np.concatenate([pose_features(compose(anchor_inv, ee)), [width]])

    def running_probability(self, obs: Observation, skill_index: int, anchor: Pose) -> float:
        tree, labels = self.models[skill_index]
        k = min(self.k, len(labels))
        _, idx = tree.query(self._feat(inverse(anchor), obs.ee_pose, obs.gripper_width), k=k)
        return float(np.mean(labels[np.atleast_1d(idx)]))

    def vote(self, obs: Observation, skill_index: int, anchor: Pose) -> bool:
        return self.running_probability(obs, skill_index, anchor) < 0.5


# --- control policy ---------------------------------------------------------------

class ReplayPolicy:
    """Nearest-trajectory replay.

    At skill start the training segment whose object-frame initiation is
    closest to the current object-frame EE pose is chosen; its object-frame
    action targets are then replayed anchored at the skill object's
    episode-start pose.  Once exhausted the last target is held.
    """

    def __init__(self, dataset: Sequence[Demonstration]):
        self.segments: dict = {}
        for demo in dataset:
            for seg in demo.skills:
                self.segments.setdefault(seg.skill_index, []).append(seg)
        self.trees = {k: cKDTree(np.array([pose_features(s.initiation_state_object_frame)
                                           for s in segs]))
                      for k, segs in self.segments.items()}
        self.active = None
        self.t = 0

    def start(self, skill_index: int, ee: Pose, anchor: Pose):
        if skill_index not in self.trees:
            raise ConfigError(f"no training segments for skill {skill_index}")
        _, i = self.trees[skill_index].query(pose_features(compose(inverse(anchor), ee)))
        self.active = (self.segments[skill_index][int(i)], anchor)
        self.t = 0

    def act(self, obs: Observation):
        seg, anchor = self.active
        acts = seg.actions_object_frame
        if self.t < len(acts):
            pose, grip = acts[self.t]
        else:
            pose, grip = acts[-1][0], Gripper.HOLD
        self.t += 1
        return compose(anchor, pose), grip


@dataclass
class Skill:
    skill_index: int
    object: str
    initiation: InitiationPredictor
    policy: ReplayPolicy
    termination: TerminationPredictor


def _rollout(rec: _Recorder, skill: Skill, start_poses: dict, horizon: int, full_obs: bool,
             ignore) -> int:
    world = rec.world
    anchor = start_poses[skill.object]
    votes = ConsecutiveVotes(skill.termination.required_votes)
    skill.policy.start(skill.skill_index, rec.ee(), anchor)
    n = 0
    while True:
        obs = observe(rec.state, world, start_poses, full_obs)
        if votes.update(skill.termination.vote(obs, skill.skill_index, anchor)):
            return n
        if n >= horizon:
            raise SkillTimeout(f"skill {skill.skill_index} did not terminate within {horizon} steps")
        target, grip = skill.policy.act(obs)
        delta = pose_delta(obs.ee_pose, target)
        act = NoisyAction(target, grip, delta, delta, np.clip(delta, -1.0, 1.0))
        rec.run_actions(iter([act]), ignore, "skill")
        n += 1


def replay_policy_rollout(world: World, state: WorldState, skill: Skill, horizon: int, *,
                          start_poses: Optional[dict] = None, full_observation: bool = True):
    """Run the skill policy until termination is accepted.

    Returns (final state, steps).  Raises SkillTimeout when `horizon`
    policy steps pass without accepted termination, and ExecutionFailure on
    a collision other than with the skill's object.
    """
    start_poses = dict(state.object_poses) if start_poses is None else start_poses
    rec = _Recorder(world, state, horizon=10 ** 9)
    _rollout(rec, skill, start_poses, horizon, full_observation,
             manipulation_ignores(state, [skill.object]))
    return rec.state, rec.steps


# --- deployment --------------------------------------------------------------------

@dataclass
class EpisodeResult:
    index: int
    success: bool
    cause: Optional[str]
    failed_skill: Optional[int]
    trace: Optional[Demonstration]
    seed: int


@dataclass
class DeployReport:
    episodes: list

    @property
    def successes(self) -> int:
        return sum(e.success for e in self.episodes)

    @property
    def success_rate(self) -> float:
        return self.successes / len(self.episodes) if self.episodes else 0.0

    def failure_counts(self) -> dict:
        out: dict = {}
        for e in self.episodes:
            if not e.success:
                out[e.cause] = out.get(e.cause, 0) + 1
        return out


def build_skills(task: TaskSpec, dataset: Sequence[Demonstration], source: Sequence[Demonstration],
                 variant: str = "class", learned_termination: Optional[bool] = None) -> list[Skill]:
    """Assemble skills for HSP-Class, HSP-Reg or the oracle."""
    if variant not in ("class", "reg", "oracle"):
        raise ConfigError(f"unknown HSP variant {variant!r}")
    if learned_termination is None:
        learned_termination = variant != "oracle"
    policy_data = list(dataset) if dataset else list(source)
    if not policy_data:
        raise ConfigError("no demonstrations to build skills from")
    if variant == "class":
        init = HspClass(dataset, source)
    elif variant == "reg":
        init = HspReg(dataset)
    else:
        init = OracleInitiation(source)
    if learned_termination:
        term = LearnedTermination(policy_data)
    else:
        term = OracleTermination(source, max_width=task.world.robot.max_width)
    policy = ReplayPolicy(policy_data)
    return [Skill(k, s.object, init, policy, term) for k, s in enumerate(task.skill_plan)]


def run_episode(task: TaskSpec, variant: str, skills: Sequence[Skill], rng: np.random.Generator, *,
                transit: str = "plan", planner: PlannerConfig = DEFAULT_PLANNER,
                skill_horizon: int = 100, interp_steps: int = 5, index: int = 0,
                seed: int = 0) -> EpisodeResult:
    world = task.world
    state = reset(task, variant, rng)
    start_poses = dict(state.object_poses)
    full = any(s.initiation.full_observation for s in skills)
    rec = _Recorder(world, state, task.horizon)
    prev_obj = None
    k = 0
    try:
        for k, skill in enumerate(skills):
            obs = observe(rec.state, world, start_poses, full)
            target = skill.initiation.predict(obs, skill.skill_index)
            if transit == "plan":
                plan = plan_three_phase(world, rec.state, target, rng,
                                        retreat_objects=[prev_obj] if prev_obj else [],
                                        approach_object=skill.object, config=planner)
                st, steps, phases = execute_plan(world, rec.state, plan, step_size=planner.step_size)
                rec.add_motion(st, steps, phases)
            else:
                ignore = manipulation_ignores(rec.state, [o for o in (prev_obj, skill.object) if o])
                _interp_transit(rec, target, interp_steps, ignore)
            start = len(rec.steps)
            ignore = manipulation_ignores(rec.state, [skill.object])
            _rollout(rec, skill, start_poses, skill_horizon, full, ignore)
            rec.boundaries.append((start, len(rec.steps)))
            rec.objects.append(skill.object)
            rec.object_poses.append(start_poses[skill.object])
            prev_obj = skill.object
    except AttemptFailure as exc:
        return EpisodeResult(index, False, exc.cause, k, _trace(task, variant, state, rec, False, seed), seed)
    except _HorizonExceeded:
        return EpisodeResult(index, False, "skill_timeout", k,
                             _trace(task, variant, state, rec, False, seed), seed)
    ok = check_success(task, rec.state)
    return EpisodeResult(index, ok, None if ok else "task_failure", None if ok else k,
                         _trace(task, variant, state, rec, ok, seed), seed)


def _trace(task, variant, initial, rec: _Recorder, success: bool, seed: int) -> Optional[Demonstration]:
    """Episode log in dataset form.

    Skills that terminated without a step are dropped and the log is cut
    after the last completed skill, so a trace always loads as a
    Demonstration; None when no skill completed.
    """
    keep = [(b, o, p) for b, o, p in zip(rec.boundaries, rec.objects, rec.object_poses) if b[1] > b[0]]
    if not keep:
        return None
    end = keep[-1][0][1]
    try:
        return annotate_segments(rec.steps[:end], [b for b, _, _ in keep], [o for _, o, _ in keep],
                                 [p for _, _, p in keep], task=task.name, variant=variant,
                                 initial_state=initial, final_state=rec.state, success=success,
                                 provenance={"kind": "deployment", "seed": int(seed)},
                                 phases=rec.phases[:end])
    except ValueError:
        return None


def deploy(task: TaskSpec, variant: str, skills: Sequence[Skill], episodes: int, seed: int = 0,
           **kw) -> DeployReport:
    """Run `episodes` independent episodes; episode i uses splitmix64(seed, i)."""
    results = []
    for i in range(episodes):
        s = splitmix64(seed, i)
        results.append(run_episode(task, variant, skills, np.random.default_rng(s), index=i,
                                   seed=s, **kw))
    return DeployReport(results)


# --- sidecar ------------------------------------------------------------------------

def save_predictor_sidecar(path, dataset: Sequence[Demonstration]) -> None:
    """Write the nearest-neighbour training sets and normalization constants."""
    labels = build_training_labels(dataset)
    reg = HspReg(dataset) if dataset else None
    out = {
        "schema": "skillgen-hsp/1",
        "classes": [{"skill": r["skill"], "label": r["label"],
                     "object_pose": r["object_pose"].to_list()} for r in labels["classes"]],
        "initiation": [{"skill": r["skill"], "ee": r["ee"].to_list(), "target": r["target"].to_list()}
                       for r in labels["initiation"]],
        "normalization": ({str(k): {"lo": m["y"].lo.tolist(), "hi": m["y"].hi.tolist()}
                           for k, m in reg.models.items()} if reg else {}),
    }
    Path(path).write_text(json.dumps(out, sort_keys=True) + "\n")
