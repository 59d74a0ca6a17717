"""Exception hierarchy shared by every module."""


class SpaseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SpaseError, ValueError):
    pass


class ParseError(InvalidInputError):
    """A workload, grid, event or solution document violates its schema."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class EventError(InvalidInputError):
    pass


class UnschedulableTaskError(SpaseError):
    def __init__(self, task_id, reason="no configuration fits any node"):
        self.task_id = task_id
        super().__init__(f"task {task_id!r} is unschedulable: {reason}")


class NoConfigError(SpaseError, LookupError):
    def __init__(self, task_id, gpus):
        self.task_id = task_id
        self.gpus = gpus
        super().__init__(f"task {task_id!r} has no configuration using {gpus} GPU(s)")


class ConversionError(SpaseError):
    """A MILP assignment cannot be turned into a plan."""


class LimitExceededError(SpaseError):
    pass


class PlanInvalidError(SpaseError):
    def __init__(self, violations):
        self.violations = list(violations)
        kinds = sorted({v.kind for v in self.violations})
        super().__init__(f"plan has {len(self.violations)} violation(s): {', '.join(kinds)}")


class SolutionRejectedError(SpaseError):
    def __init__(self, tags):
        self.tags = list(tags)
        super().__init__("solution violates: " + ", ".join(self.tags))
