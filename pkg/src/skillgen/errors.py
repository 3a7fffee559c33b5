"""Exception hierarchy.

Attempt-level failures (unreachable IK targets, planner budget exhaustion,
execution aborts) carry a ``cause`` string matching the failure buckets
recorded in dataset statistics.
"""


class SkillGenError(Exception):
    pass


class DomainError(SkillGenError, ValueError):
    """Input outside the domain of an operation (e.g. joint-limit violation)."""


class ConfigError(SkillGenError):
    pass


class UnsatisfiableReset(ConfigError):
    pass


class AnnotationError(SkillGenError, ValueError):
    pass


class DatasetError(SkillGenError):
    pass


class ObservabilityError(SkillGenError):
    pass


class AttemptFailure(SkillGenError):
    cause = "attempt_failure"


class IkUnreachable(AttemptFailure):
    cause = "ik_unreachable"


class PlanFailure(AttemptFailure):
    cause = "plan_failure"


class ExecutionFailure(AttemptFailure):
    cause = "execution_failure"


class SkillTimeout(AttemptFailure):
    cause = "skill_timeout"
