"""
Exception hierarchy for mcsim.

Input problems derive from TasksetError or ScenarioError so the CLI and the
web service can map them onto "bad input" without inspecting messages.
"""


class McSimError(Exception):
    """Base class for every error raised by the simulator library."""


# --- Taskset input ---

class TasksetError(McSimError):
    """A taskset could not be loaded or violates a model invariant."""


class TasksetParseError(TasksetError):
    pass


class EmptyTasksetError(TasksetError):
    def __init__(self):
        super().__init__("empty taskset")


class DuplicateTaskIdError(TasksetError):
    def __init__(self, task_id: str):
        super().__init__(f"duplicate task id: {task_id}")
        self.task_id = task_id


class DuplicatePriorityError(TasksetError):
    def __init__(self, priority: int, task_ids):
        super().__init__(f"duplicate priority {priority} shared by {', '.join(task_ids)}")
        self.priority = priority
        self.task_ids = tuple(task_ids)


class WcetOrderError(TasksetError):
    """C_hi < C_lo on a HC task."""


class LcWcetMismatchError(TasksetError):
    """An LC task declares C_hi different from C_lo."""


class WcetExceedsPeriodError(TasksetError):
    pass


class NonPositiveTimeError(TasksetError):
    pass


class NoHighCriticalityTaskError(TasksetError):
    def __init__(self):
        super().__init__("taskset has no HC task")


class NonIntegralTimeError(TasksetError):
    """A model-time value does not land on a whole tick after scaling."""


# --- Scenario input ---

class ScenarioError(McSimError):
    pass


class MissingScriptedBudgetError(ScenarioError):
    def __init__(self, task_id: str, job_index: int):
        super().__init__(f"scenario has no budget for task {task_id} job {job_index}")
        self.task_id = task_id
        self.job_index = job_index


class BudgetOutOfRangeError(ScenarioError):
    pass


class HorizonLimitError(ScenarioError):
    """A requested horizon is longer than the service accepts."""


# --- Analysis ---

class InfeasibleShrinkError(McSimError):
    """A shrink would leave a period no longer than the task's WCET."""

    def __init__(self, message: str = "infeasible shrink"):
        super().__init__(message)


class TheoremInapplicableError(McSimError):
    def __init__(self, message: str = "theorem inapplicable"):
        super().__init__(message)


# --- Internal ---

class ModeControllerError(McSimError):
    """The mode state machine was driven through an illegal transition."""
