"""Demonstration records, segment annotation and dataset files.

A demonstration alternates motion segments (planner-driven, gripper held)
and skill segments (object-centric, stored in the skill object's frame).
Datasets are newline-delimited JSON: one header line with the schema tag,
stats and metadata, then one demonstration per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from skillgen.errors import AnnotationError, DatasetError
from skillgen.geometry import Pose, compose, inverse
from skillgen.world.model import Attachment, WorldState
from skillgen.world.sim import Gripper

DATASET_SCHEMA = "skillgen-dataset/1"
FAILURE_CAUSES = ("ik_unreachable", "plan_failure", "execution_failure", "task_failure")


@dataclass(frozen=True, eq=False)
class Step:
    """One 20 Hz tick: observation before the tick and the action sent."""

    q: np.ndarray
    ee: Pose  # achieved EE pose before the tick
    gripper_width: float
    target: Pose  # absolute EE target the action was derived from
    gripper: Gripper
    action: np.ndarray  # normalized 6-D delta actually executed
    reached: Pose  # achieved EE pose after the tick

    def __post_init__(self):
        for name in ("q", "action"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        object.__setattr__(self, "gripper", Gripper(self.gripper))
        object.__setattr__(self, "gripper_width", float(self.gripper_width))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Step):
            return NotImplemented
        return (np.array_equal(self.q, other.q) and self.ee == other.ee
                and self.gripper_width == other.gripper_width and self.target == other.target
                and self.gripper == other.gripper and np.array_equal(self.action, other.action)
                and self.reached == other.reached)


@dataclass(frozen=True)
class MotionSegment:
    steps: tuple[Step, ...] = ()
    phases: tuple[str, ...] = ()  # one label per step (retreat, transit, transfer, approach, interp)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "phases", tuple(self.phases) or ("transit",) * len(self.steps))
        if len(self.phases) != len(self.steps):
            raise AnnotationError("motion segment needs one phase label per step")
        if any(s.gripper is not Gripper.HOLD for s in self.steps):
            raise AnnotationError("gripper may not toggle inside a motion segment")

    @property
    def actions_world_frame(self) -> tuple:
        return tuple((s.target, s.gripper) for s in self.steps)

    @property
    def labels(self) -> tuple[str, ...]:
        return ("motion",) * len(self.steps)


@dataclass(frozen=True)
class SkillSegmentRecord:
    skill_index: int
    object: str
    object_pose_at_start: Pose
    actions_object_frame: tuple  # (Pose, Gripper) pairs
    initiation_state_object_frame: Pose
    termination_state_object_frame: Pose
    steps: tuple[Step, ...] = ()
    recovery_steps: int = 0  # leading steps that bring a noised initiation back
    nominal_initiation_object_frame: Optional[Pose] = None

    def __post_init__(self):
        acts = tuple((p, Gripper(g)) for p, g in self.actions_object_frame)
        object.__setattr__(self, "actions_object_frame", acts)
        object.__setattr__(self, "steps", tuple(self.steps))
        if not acts:
            raise AnnotationError("skill segment needs at least one action")
        if self.steps and len(self.steps) != len(acts):
            raise AnnotationError("skill segment steps and actions differ in length")
        if not 0 <= self.recovery_steps <= len(acts):
            raise AnnotationError("recovery_steps out of range")

    @property
    def labels(self) -> tuple[str, ...]:
        return ("skill",) * len(self.actions_object_frame)

    def world_actions(self, object_pose: Optional[Pose] = None) -> list:
        anchor = self.object_pose_at_start if object_pose is None else object_pose
        return [(compose(anchor, p), g) for p, g in self.actions_object_frame]


Segment = Union[MotionSegment, SkillSegmentRecord]


@dataclass(frozen=True)
class Demonstration:
    task: str
    variant: str
    initial_state: WorldState
    segments: tuple
    success: bool
    provenance: dict = field(default_factory=dict)
    final_state: Optional[WorldState] = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "provenance", dict(self.provenance))
        for i, seg in enumerate(self.segments):
            want = MotionSegment if i % 2 == 0 else SkillSegmentRecord
            if not isinstance(seg, want):
                raise AnnotationError(f"segment {i} must be a {want.__name__} (motion/skill alternation)")
        if len(self.segments) % 2:
            raise AnnotationError("a demonstration must end with a skill segment")

    @property
    def skills(self) -> list[SkillSegmentRecord]:
        return list(self.segments[1::2])

    @property
    def motions(self) -> list[MotionSegment]:
        return list(self.segments[0::2])

    def flat_steps(self) -> list[Step]:
        return [s for seg in self.segments for s in seg.steps]

    def boundaries(self) -> list[tuple[int, int]]:
        out, i = [], 0
        for seg in self.segments:
            n = len(seg.steps)
            if isinstance(seg, SkillSegmentRecord):
                out.append((i, i + n))
            i += n
        return out

    def labels(self) -> list[str]:
        return [lab for seg in self.segments for lab in seg.labels]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Demonstration):
            return NotImplemented
        return _demo_to_dict(self) == _demo_to_dict(other)


@dataclass
class DatasetStats:
    attempts: int = 0
    successes: int = 0
    failures: dict = field(default_factory=lambda: {c: 0 for c in FAILURE_CAUSES})
    per_skill_failures: dict = field(default_factory=dict)  # "skill_index" -> {cause: count}
    complete: bool = True

    @property
    def generation_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    def record(self, cause: Optional[str], skill_index: Optional[int] = None):
        self.attempts += 1
        if cause is None:
            self.successes += 1
            return
        if cause not in FAILURE_CAUSES:
            raise ValueError(f"unknown failure cause {cause!r}")
        self.failures[cause] += 1
        if skill_index is not None:
            per = self.per_skill_failures.setdefault(str(skill_index), {})
            per[cause] = per.get(cause, 0) + 1

    def check(self):
        if sum(self.failures.values()) != self.attempts - self.successes:
            raise DatasetError("failure causes do not sum to attempts - successes")
        if not 0.0 <= self.generation_rate <= 1.0:
            raise DatasetError("generation rate outside [0, 1]")

    def summary(self) -> dict:
        flat = {"attempts": self.attempts, "successes": self.successes,
                "generation_rate": self.generation_rate, "complete": self.complete}
        for cause in FAILURE_CAUSES:
            flat[f"failures.{cause}"] = self.failures.get(cause, 0)
        for idx in sorted(self.per_skill_failures, key=int):
            for cause, n in sorted(self.per_skill_failures[idx].items()):
                flat[f"skill{idx}.{cause}"] = n
        return flat

    def to_dict(self) -> dict:
        return {"attempts": self.attempts, "successes": self.successes,
                "failures": dict(self.failures), "per_skill_failures": self.per_skill_failures,
                "complete": self.complete}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetStats":
        failures = {c: 0 for c in FAILURE_CAUSES}
        failures.update(d.get("failures", {}))
        out = cls(int(d["attempts"]), int(d["successes"]), failures,
                  dict(d.get("per_skill_failures", {})), bool(d.get("complete", True)))
        out.check()
        return out


# --- object frame and annotation ---------------------------------------------

def to_object_frame(actions: Sequence, object_pose: Pose, *, skill_index: int = 0,
                    object_name: str = "object", steps: Sequence[Step] = (),
                    initiation: Optional[Pose] = None, termination: Optional[Pose] = None,
                    recovery_steps: int = 0,
                    nominal_initiation: Optional[Pose] = None) -> SkillSegmentRecord:
    """Re-express world-frame (pose, gripper) actions relative to the object.

    Without explicit states the initiation and termination default to the
    first and last action poses; with `steps` they are the first and final
    achieved EE poses.
    """
    inv = inverse(object_pose)
    acts = tuple((compose(inv, p), Gripper(g)) for p, g in actions)
    if not acts:
        raise AnnotationError("skill segment needs at least one action")
    if initiation is None:
        initiation = steps[0].ee if steps else compose(object_pose, acts[0][0])
    if termination is None:
        termination = steps[-1].reached if steps else compose(object_pose, acts[-1][0])
    return SkillSegmentRecord(
        skill_index, object_name, object_pose, acts, compose(inv, initiation),
        compose(inv, termination), tuple(steps), recovery_steps,
        None if nominal_initiation is None else compose(inv, nominal_initiation))


def skill_record_from_steps(steps: Sequence[Step], object_pose: Pose, skill_index: int,
                            object_name: str, **kw) -> SkillSegmentRecord:
    return to_object_frame([(s.target, s.gripper) for s in steps], object_pose,
                           skill_index=skill_index, object_name=object_name, steps=steps, **kw)


def annotate_segments(steps: Sequence[Step], boundaries: Sequence[tuple[int, int]],
                      objects: Sequence[str], object_poses: Sequence[Pose], *, task: str,
                      variant: str, initial_state: WorldState,
                      final_state: Optional[WorldState] = None, success: bool = True,
                      provenance: Optional[dict] = None,
                      phases: Optional[Sequence[str]] = None) -> Demonstration:
    """Split a flat step log into alternating motion and skill segments.

    `boundaries` are half-open (start, end) step ranges, one per skill, each
    paired with its object name and the object's pose at skill start.
    """
    steps = list(steps)
    if not (len(boundaries) == len(objects) == len(object_poses)):
        raise AnnotationError("need one object and one object pose per skill boundary")
    if phases is not None and len(phases) != len(steps):
        raise AnnotationError("need one phase label per step")
    segments, prev = [], 0
    for k, (a, b) in enumerate(boundaries):
        if not (prev <= a < b <= len(steps)):
            raise AnnotationError(f"skill boundary {k} = ({a}, {b}) overlaps, is unordered "
                                  f"or leaves the trajectory (length {len(steps)})")
        ph = tuple(phases[prev:a]) if phases is not None else ()
        segments.append(MotionSegment(tuple(steps[prev:a]), ph))
        segments.append(skill_record_from_steps(steps[a:b], object_poses[k], k, objects[k]))
        prev = b
    if prev != len(steps):
        raise AnnotationError("steps after the last skill segment are not allowed")
    return Demonstration(task, variant, initial_state, tuple(segments), success,
                         provenance or {"kind": "source"}, final_state)


# --- serialization ------------------------------------------------------------

def _state_to_dict(s: Optional[WorldState]):
    if s is None:
        return None
    att = None
    if s.attachment is not None:
        att = {"name": s.attachment.name, "grasp": s.attachment.grasp.to_list()}
    return {"q": [float(v) for v in s.q], "gripper_width": s.gripper_width,
            "objects": {k: p.to_list() for k, p in sorted(s.object_poses.items())},
            "attachment": att}


def _state_from_dict(d) -> Optional[WorldState]:
    if d is None:
        return None
    att = d.get("attachment")
    if att is not None:
        att = Attachment(att["name"], Pose.from_list(att["grasp"]))
    return WorldState(np.array(d["q"], dtype=float), d["gripper_width"],
                      {k: Pose.from_list(v) for k, v in d["objects"].items()}, att)


def _step_to_list(s: Step) -> list:
    return [[float(v) for v in s.q], s.ee.to_list(), s.gripper_width, s.target.to_list(),
            s.gripper.value, [float(v) for v in s.action], s.reached.to_list()]


def _step_from_list(v) -> Step:
    q, ee, w, tgt, g, act, reached = v
    return Step(np.array(q, dtype=float), Pose.from_list(ee), w, Pose.from_list(tgt), Gripper(g),
                np.array(act, dtype=float), Pose.from_list(reached))


def _segment_to_dict(seg) -> dict:
    if isinstance(seg, MotionSegment):
        return {"kind": "motion", "steps": [_step_to_list(s) for s in seg.steps],
                "phases": list(seg.phases)}
    return {
        "kind": "skill", "skill_index": seg.skill_index, "object": seg.object,
        "object_pose": seg.object_pose_at_start.to_list(),
        "actions": [[p.to_list(), g.value] for p, g in seg.actions_object_frame],
        "initiation": seg.initiation_state_object_frame.to_list(),
        "termination": seg.termination_state_object_frame.to_list(),
        "steps": [_step_to_list(s) for s in seg.steps],
        "recovery_steps": seg.recovery_steps,
        "nominal_initiation": (None if seg.nominal_initiation_object_frame is None
                               else seg.nominal_initiation_object_frame.to_list()),
    }


def _segment_from_dict(d: dict):
    if d["kind"] == "motion":
        return MotionSegment(tuple(_step_from_list(s) for s in d["steps"]), tuple(d["phases"]))
    if d["kind"] != "skill":
        raise DatasetError(f"unknown segment kind {d['kind']!r}")
    nominal = d.get("nominal_initiation")
    return SkillSegmentRecord(
        d["skill_index"], d["object"], Pose.from_list(d["object_pose"]),
        tuple((Pose.from_list(p), Gripper(g)) for p, g in d["actions"]),
        Pose.from_list(d["initiation"]), Pose.from_list(d["termination"]),
        tuple(_step_from_list(s) for s in d["steps"]), d["recovery_steps"],
        None if nominal is None else Pose.from_list(nominal))


def _demo_to_dict(demo: Demonstration) -> dict:
    return {"task": demo.task, "variant": demo.variant,
            "initial_state": _state_to_dict(demo.initial_state),
            "segments": [_segment_to_dict(s) for s in demo.segments],
            "success": demo.success, "provenance": demo.provenance,
            "final_state": _state_to_dict(demo.final_state)}


def _demo_from_dict(d: dict) -> Demonstration:
    return Demonstration(d["task"], d["variant"], _state_from_dict(d["initial_state"]),
                         tuple(_segment_from_dict(s) for s in d["segments"]), bool(d["success"]),
                         d.get("provenance", {}), _state_from_dict(d.get("final_state")))


def _dumps(obj) -> str:
    # json writes floats with repr, which round-trips every double exactly
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dataset_lines(demos: Iterable[Demonstration], stats: DatasetStats,
                  meta: Optional[dict] = None) -> list[str]:
    demos = list(demos)
    header = {"schema": DATASET_SCHEMA, "count": len(demos), "stats": stats.to_dict(),
              "meta": meta or {}}
    return [_dumps(header)] + [_dumps(_demo_to_dict(d)) for d in demos]


def save_dataset(demos: Iterable[Demonstration], stats: DatasetStats, path,
                 meta: Optional[dict] = None) -> None:
    stats.check()
    lines = dataset_lines(demos, stats, meta)
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, *, with_meta: bool = False):
    """Read a dataset file; returns (demos, stats) or (demos, stats, meta)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from None
    lines = text.splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file (missing header line)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:1: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict) or header.get("schema") != DATASET_SCHEMA:
        raise DatasetError(f"{path}:1: expected schema {DATASET_SCHEMA!r}")
    try:
        stats = DatasetStats.from_dict(header["stats"])
    except (KeyError, TypeError, ValueError, DatasetError) as exc:
        raise DatasetError(f"{path}:1: bad stats block ({exc})") from None
    demos = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            demos.append(_demo_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AnnotationError) as exc:
            raise DatasetError(f"{path}:{lineno}: record {lineno - 2} is invalid "
                               f"({type(exc).__name__}: {exc})") from None
    if header.get("count", len(demos)) != len(demos):
        raise DatasetError(f"{path}: header announces {header['count']} records, found {len(demos)}")
    if with_meta:
        return demos, stats, header.get("meta", {})
    return demos, stats


def segment_lengths(demos: Iterable[Demonstration]) -> dict:
    """Step counts per segment kind, for histograms."""
    out = {"motion": [], "skill": []}
    for d in demos:
        for seg in d.segments:
            out["motion" if isinstance(seg, MotionSegment) else "skill"].append(len(seg.steps))
    return out
