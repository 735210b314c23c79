"""
Dual-criticality task model: tasks, tasksets, per-job runtime state and the
taskset file loader.

All times are integer ticks. A taskset file states times in model units and a
``time_scale`` (ticks per unit); values are parsed exactly with Fraction so
that e.g. C^h = 8.9 at time_scale 10 becomes 89 ticks without float drift.
"""
import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from config.logging_config import get_logger
from config.settings import settings
from shared.errors import (
    DuplicatePriorityError,
    DuplicateTaskIdError,
    EmptyTasksetError,
    InfeasibleShrinkError,
    LcWcetMismatchError,
    NoHighCriticalityTaskError,
    NonIntegralTimeError,
    NonPositiveTimeError,
    TasksetParseError,
    WcetExceedsPeriodError,
    WcetOrderError,
)

logger = get_logger(__name__)


class Criticality(str, Enum):
    LC = "LC"
    HC = "HC"

    @property
    def rank(self) -> int:
        return 1 if self is Criticality.HC else 0


class TaskMode(str, Enum):
    LO = "LO"
    HI = "HI"

    @property
    def rank(self) -> int:
        return 1 if self is TaskMode.HI else 0


class JobStatus(str, Enum):
    READY = "Ready"
    RUNNING = "Running"
    DONE = "Done"


class SystemMode(str, Enum):
    NORMAL = "Normal"
    CRITICAL = "Critical"


class Pattern(str, Enum):
    REGULAR = "Regular"
    STRETCHING = "Stretching"
    SHRINKING = "Shrinking"


class Task(BaseModel):
    """Static attributes <T, C^l, C^h, chi, rho> of one periodic task."""

    model_config = ConfigDict(frozen=True)

    id: str
    T: int
    C_lo: int
    C_hi: int
    chi: Criticality
    rho: int
    label: Optional[str] = None

    @model_validator(mode="after")
    def _check_budgets(self):
        if self.T <= 0:
            raise NonPositiveTimeError(f"task {self.id}: period must be positive, got {self.T}")
        if self.C_lo <= 0:
            raise NonPositiveTimeError(f"task {self.id}: wcet_lo must be positive, got {self.C_lo}")
        if self.chi is Criticality.LC and self.C_hi != self.C_lo:
            raise LcWcetMismatchError(
                f"task {self.id}: LC tasks need wcet_hi == wcet_lo ({self.C_hi} != {self.C_lo})"
            )
        if self.C_hi < self.C_lo:
            raise WcetOrderError(f"task {self.id}: wcet_hi {self.C_hi} < wcet_lo {self.C_lo}")
        if self.C_hi > self.T:
            raise WcetExceedsPeriodError(f"task {self.id}: wcet_hi {self.C_hi} exceeds period {self.T}")
        return self

    @property
    def is_hc(self) -> bool:
        return self.chi is Criticality.HC

    @property
    def slack(self) -> int:
        return self.T - self.C_lo

    def wcet(self, mode: TaskMode) -> int:
        return self.C_hi if mode is TaskMode.HI else self.C_lo


class TaskSet(BaseModel):
    """An ordered, validated collection of tasks sharing one time scale."""

    model_config = ConfigDict(frozen=True)

    tasks: Tuple[Task, ...]
    time_scale: int = 1
    name: Optional[str] = None

    @field_validator("time_scale")
    @classmethod
    def _positive_scale(cls, value: int) -> int:
        if value <= 0:
            raise NonPositiveTimeError(f"time_scale must be a positive integer, got {value}")
        return value

    @model_validator(mode="after")
    def _check_taskset(self):
        if not self.tasks:
            raise EmptyTasksetError()
        seen_ids = set()
        for task in self.tasks:
            if task.id in seen_ids:
                raise DuplicateTaskIdError(task.id)
            seen_ids.add(task.id)
        by_priority: Dict[int, List[str]] = {}
        for task in self.tasks:
            by_priority.setdefault(task.rho, []).append(task.id)
        for rho, ids in by_priority.items():
            if len(ids) > 1:
                raise DuplicatePriorityError(rho, ids)
        if not any(task.is_hc for task in self.tasks):
            raise NoHighCriticalityTaskError()
        return self

    def by_id(self, task_id: str) -> Task:
        for task in self.tasks:
            if task.id == task_id:
                return task
        raise KeyError(task_id)

    @property
    def hc_tasks(self) -> List[Task]:
        return [task for task in self.tasks if task.is_hc]

    @property
    def lc_tasks(self) -> List[Task]:
        return [task for task in self.tasks if not task.is_hc]

    def by_priority(self) -> List[Task]:
        """Tasks from highest to lowest priority."""
        return sorted(self.tasks, key=lambda task: task.rho)

    def to_ticks(self, units: Union[int, Fraction]) -> int:
        return _scale(Fraction(units), self.time_scale, "value")

    def to_units(self, ticks: int) -> Fraction:
        return Fraction(ticks, self.time_scale)


@dataclass(slots=True, eq=False)
class JobState:
    """Runtime state of the current release of one task."""

    task: Task
    index: int
    release: int
    abs_deadline: int
    budget: int
    status: JobStatus = JobStatus.READY
    lam: int = 0
    omega: TaskMode = TaskMode.LO
    discarded: bool = False
    first_start: Optional[int] = None
    finish: Optional[int] = None
    # ticks already cut from this job's deadline by a shrink plan
    shortened: int = 0

    @property
    def remaining(self) -> int:
        return self.budget - self.lam

    @property
    def pending(self) -> bool:
        return self.status is not JobStatus.DONE

    def refresh(self) -> None:
        """Omega -> LO and Lambda -> 0."""
        self.omega = TaskMode.LO
        self.lam = 0


# --- Taskset files ---

def as_fraction(value):
    """Exact model-time value from an int, a Fraction or a string such as "8.9" or "37/3"."""
    if value is None or isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("expected a number")
    if isinstance(value, (int, str)):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not an exact number: {value!r}") from exc
    raise ValueError(f"not an exact number: {value!r}")


class TaskEntry(BaseModel):
    id: str
    period: Fraction
    wcet_lo: Fraction
    wcet_hi: Optional[Fraction] = None
    criticality: Criticality
    priority: int
    label: Optional[str] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @field_validator("period", "wcet_lo", "wcet_hi", mode="before")
    @classmethod
    def _exact(cls, value):
        return as_fraction(value)


class TasksetDocument(BaseModel):
    name: Optional[str] = None
    time_scale: int = 1
    tasks: List[TaskEntry]


def _scale(value: Fraction, time_scale: int, what: str) -> int:
    ticks = value * time_scale
    if ticks.denominator != 1:
        raise NonIntegralTimeError(
            f"{what}={value} is not a whole number of ticks at time_scale={time_scale}"
        )
    return int(ticks)


def taskset_from_document(doc: TasksetDocument) -> TaskSet:
    if doc.time_scale <= 0:
        raise NonPositiveTimeError(f"time_scale must be a positive integer, got {doc.time_scale}")
    if not doc.tasks:
        raise EmptyTasksetError()
    tasks = []
    for entry in doc.tasks:
        wcet_hi = entry.wcet_hi if entry.wcet_hi is not None else entry.wcet_lo
        tasks.append(
            Task(
                id=entry.id,
                T=_scale(entry.period, doc.time_scale, f"{entry.id}.period"),
                C_lo=_scale(entry.wcet_lo, doc.time_scale, f"{entry.id}.wcet_lo"),
                C_hi=_scale(wcet_hi, doc.time_scale, f"{entry.id}.wcet_hi"),
                chi=entry.criticality,
                rho=entry.priority,
                label=entry.label,
            )
        )
    return TaskSet(tasks=tuple(tasks), time_scale=doc.time_scale, name=doc.name)


def load_taskset(source: str) -> TaskSet:
    """Parse taskset JSON text into a validated TaskSet with times in ticks."""
    try:
        raw = json.loads(source, parse_float=Fraction)
    except json.JSONDecodeError as exc:
        raise TasksetParseError(f"taskset is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise TasksetParseError("taskset must be a JSON object")
    if not raw.get("tasks"):
        raise EmptyTasksetError()
    try:
        doc = TasksetDocument.model_validate(raw)
    except ValidationError as exc:
        raise TasksetParseError(f"malformed taskset: {exc.errors()[0]['msg']}") from exc
    taskset = taskset_from_document(doc)
    logger.debug("Taskset loaded", name=taskset.name, tasks=len(taskset.tasks))
    return taskset


def load_taskset_file(path: Union[str, Path]) -> TaskSet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TasksetParseError(f"cannot read taskset file {path}: {exc.strerror}") from exc
    return load_taskset(text)


def _units_json(value: Fraction):
    if value.denominator == 1:
        return int(value)
    den = value.denominator
    for prime in (2, 5):
        while den % prime == 0:
            den //= prime
    if den == 1:
        return float(value)
    return f"{value.numerator}/{value.denominator}"


def dump_taskset(taskset: TaskSet) -> str:
    """Serialize a TaskSet back to the file grammar (inverse of load_taskset)."""
    doc = {
        "name": taskset.name,
        "time_scale": taskset.time_scale,
        "tasks": [
            {
                "id": task.id,
                "period": _units_json(taskset.to_units(task.T)),
                "wcet_lo": _units_json(taskset.to_units(task.C_lo)),
                "wcet_hi": _units_json(taskset.to_units(task.C_hi)),
                "criticality": task.chi.value,
                "priority": task.rho,
                **({"label": task.label} if task.label else {}),
            }
            for task in taskset.tasks
        ],
    }
    return json.dumps(doc, indent=2)


# --- Derived quantities ---

def utilization(task: Task, mode: TaskMode = TaskMode.LO, shrink: int = 0) -> Fraction:
    """
    C_lo/T in LO, C_hi/T in HI, C_lo/(T - shrink) while the period is shrunk.
    The shrunk period must stay strictly longer than the budget.
    """
    if mode is TaskMode.HI:
        return Fraction(task.C_hi, task.T)
    if shrink < 0 or (shrink and shrink >= task.T - task.C_lo):
        raise InfeasibleShrinkError(
            f"infeasible shrink: task {task.id} cannot shrink period {task.T} by {shrink}"
        )
    return Fraction(task.C_lo, task.T - shrink)


def hyperperiod(taskset: TaskSet) -> int:
    return math.lcm(*(task.T for task in taskset.tasks))


def resolve_fixture(ref: Union[str, Path]) -> Path:
    """A path as given when it exists, otherwise ``<fixtures_dir>/<ref>.json``."""
    path = Path(ref)
    if path.exists():
        return path
    candidate = settings.fixtures_dir / f"{ref}.json"
    if candidate.exists():
        return candidate
    raise TasksetParseError(f"no such file or fixture: {ref}")
