"""
Demand arithmetic for the elastic multimode scheduler.

Psi^H / Psi^L bound what one task can still request over an interval: the
residual of its current job plus every further job whose whole budget fits
before the interval end. The W aggregates sum them over the three disjoint
interferer sets of a pivot task, DEM adds the pivot's own residual, DEM^c is
the trigger-task variant running C^h, DEM^delta replaces the LC term with the
shrunk-period workload. DBF generalizes each DEM to an arbitrary horizon and
the theorem tests check busy-period closure (DBF(z) <= z for some z).

Intervals are expressed relative to the pivot's current release, so the
pivot window is [t % T_i, T_i] for a HC pivot. Everything is integer or
Fraction arithmetic.

Two anchorings are supported for the interferers:
  window  - every interferer's future jobs are counted from the pivot-window
            start, exactly as the workload formulas are printed;
  release - future jobs are counted from the interferer's own next release
            (its current period end, which already reflects stretching).

Two countings of future jobs:
  fitting  - a job counts only when its whole budget fits before the
             interval end, as the DEM formulas are stated;
  released - every job released inside the interval counts. Busy-window
             tests and the runtime switch use this request bound, since a
             late release still preempts the pivot.
"""
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from shared.errors import InfeasibleShrinkError, TasksetParseError, TheoremInapplicableError
from shared.mc_model import (
    JobState,
    JobStatus,
    Pattern,
    SystemMode,
    Task,
    TaskMode,
    TaskSet,
    as_fraction,
)
from shared.sched_policies import hp, lp_h, lp_l

Number = Union[int, Fraction]


class Anchoring(str, Enum):
    WINDOW = "window"
    RELEASE = "release"


class DemandKind(str, Enum):
    NORMAL = "Normal"
    CRITICAL = "Critical"
    SHRINK = "Shrink"
    OVERRUN = "Overrun"
    GUARDED = "Guarded"


class Counting(str, Enum):
    FITTING = "fitting"
    RELEASED = "released"


class Theorem(str, Enum):
    T1_NORMAL = "T1_Normal"
    T2_ALL_HI = "T2_AllHI"
    T3_SHRINKING = "T3_Shrinking"
    T4_CRITICAL = "T4_Critical"


@dataclass(frozen=True)
class Interval:
    a: Number
    b: Number

    def __post_init__(self):
        if self.a > self.b:
            raise ValueError(f"interval start {self.a} after end {self.b}")

    @property
    def length(self) -> Number:
        return self.b - self.a


@dataclass
class Snapshot:
    """A consistent view of every task's current job at one instant."""

    t: int
    jobs: Dict[str, JobState]
    mode: SystemMode = SystemMode.NORMAL
    pattern: Pattern = Pattern.REGULAR
    lc_shrink: Optional[Tuple[int, int]] = None
    # ticks an active shrink plan may cut from each LC task's coming periods
    period_cut: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def synchronous(cls, taskset: TaskSet, omega: TaskMode = TaskMode.LO, **kwargs) -> "Snapshot":
        """All tasks released together at 0, nothing executed yet."""
        jobs = {}
        for task in taskset.tasks:
            job = JobState(task=task, index=0, release=0, abs_deadline=task.T, budget=task.C_lo)
            if task.is_hc and omega is TaskMode.HI:
                job.omega = TaskMode.HI
                job.budget = task.C_hi
            jobs[task.id] = job
        return cls(t=0, jobs=jobs, **kwargs)

    @property
    def tasks(self) -> List[Task]:
        return [job.task for job in self.jobs.values()]


@dataclass
class DemandCounters:
    """Decision-overhead counters: DEM evaluations and summed filter-set sizes."""

    evaluations: int = 0
    filter_set_size: int = 0


@dataclass
class DemandQuery:
    pivot: Task
    t: int
    snapshot: Snapshot
    lc_shrink: Optional[Tuple[int, int]] = None
    horizon: Optional[int] = None
    anchoring: Anchoring = Anchoring.RELEASE
    counters: Optional[DemandCounters] = None
    counting: Counting = Counting.FITTING

    # --- pivot window, relative to the pivot's current release ---

    @property
    def base(self) -> int:
        job = self.snapshot.jobs.get(self.pivot.id)
        if job is not None:
            return job.release
        return self.t - self.t % self.pivot.T

    @property
    def deadline(self) -> int:
        job = self.snapshot.jobs.get(self.pivot.id)
        if job is not None:
            return job.abs_deadline
        return self.base + self.pivot.T

    @property
    def window(self) -> Interval:
        end = self.horizon if self.horizon is not None else self.deadline
        return Interval(self.t - self.base, max(end, self.t) - self.base)

    def interval_for(self, task: Task) -> Interval:
        win = self.window
        if self.anchoring is Anchoring.WINDOW:
            return win
        job = self.snapshot.jobs.get(task.id)
        if job is None:
            return win
        nxt = job.release if job.release > self.t else job.abs_deadline
        start = min(max(nxt - self.base, win.a), win.b)
        return Interval(start, win.b)

    def consumed(self, task: Task, mode: TaskMode) -> int:
        """Lambda of the task's current job; a finished or future job has no residual."""
        job = self.snapshot.jobs.get(task.id)
        if job is None:
            return 0
        if job.status is JobStatus.DONE or job.release > self.t:
            return task.wcet(mode)
        return job.lam

    def omega(self, task: Task) -> TaskMode:
        job = self.snapshot.jobs.get(task.id)
        return job.omega if job is not None else TaskMode.LO

    def period(self, task: Task) -> int:
        """Spacing of the task's future releases; only request counting sees plan cuts."""
        if self.counting is Counting.RELEASED:
            return task.T - self.snapshot.period_cut.get(task.id, 0)
        return task.T

    def others(self) -> List[Task]:
        return [task for task in self.snapshot.tasks if task.id != self.pivot.id]

    def count(self, size: int) -> None:
        if self.counters is not None:
            self.counters.filter_set_size += size


def _fitting_jobs(length: Number, period: Number, wcet: int) -> int:
    """ceil(length/T) if length % T >= C else floor(length/T)."""
    n = math.floor(Fraction(length) / period)
    remainder = length - n * period
    if remainder >= wcet:
        return n + 1
    return n


def _released_jobs(length: Number, period: Number) -> int:
    """Releases inside [a, a + length) of a grid anchored at a."""
    if length <= 0:
        return 0
    return math.ceil(Fraction(length) / period)


def _psi(wcet: int, period: int, lambda_at_a: int, iv: Interval, counting: Counting = Counting.FITTING) -> int:
    residual = max(wcet - lambda_at_a, 0)
    if counting is Counting.RELEASED:
        return residual + wcet * _released_jobs(iv.length, period)
    return residual + wcet * _fitting_jobs(iv.length, period, wcet)


def psi_h(
    task: Task, lambda_at_a: int, iv: Interval,
    counting: Counting = Counting.FITTING, period: Optional[int] = None,
) -> int:
    """Workload of a HC task running C^h over [a, b]."""
    return _psi(task.C_hi, period or task.T, lambda_at_a, iv, counting)


def psi_l(
    task: Task, lambda_at_a: int, iv: Interval,
    counting: Counting = Counting.FITTING, period: Optional[int] = None,
) -> int:
    """Workload of a task running C^l over [a, b]."""
    return _psi(task.C_lo, period or task.T, lambda_at_a, iv, counting)


def _hi_interferers(query: DemandQuery, among: Iterable[Task]) -> List[Task]:
    return [task for task in among if task.is_hc and query.omega(task) is TaskMode.HI]


def w_h_hi(query: DemandQuery) -> int:
    """HC tasks currently in HI (any priority), each at C^h."""
    tasks = _hi_interferers(query, query.others())
    query.count(len(tasks))
    return sum(
        psi_h(task, query.consumed(task, TaskMode.HI), query.interval_for(task), query.counting)
        for task in tasks
    )


def w_h_lo(query: DemandQuery) -> int:
    """Higher-priority HC tasks still in LO, each at C^l."""
    tasks = [
        task for task in hp(query.pivot, query.others())
        if task.is_hc and query.omega(task) is TaskMode.LO
    ]
    query.count(len(tasks))
    return sum(
        psi_l(task, query.consumed(task, TaskMode.LO), query.interval_for(task), query.counting)
        for task in tasks
    )


def w_l(query: DemandQuery) -> int:
    """Higher-priority LC tasks."""
    tasks = [task for task in hp(query.pivot, query.others()) if not task.is_hc]
    query.count(len(tasks))
    return sum(
        psi_l(task, query.consumed(task, TaskMode.LO), query.interval_for(task), query.counting, query.period(task))
        for task in tasks
    )


def _tick(query: DemandQuery) -> None:
    if query.counters is not None:
        query.counters.evaluations += 1


def dem(query: DemandQuery) -> int:
    """Upper bound on the demand a HC pivot in LO faces until its window end."""
    _tick(query)
    own = max(query.pivot.C_lo - query.consumed(query.pivot, TaskMode.LO), 0)
    return w_h_hi(query) + w_h_lo(query) + w_l(query) + own


def dem_c(query: DemandQuery) -> int:
    """Demand of a trigger task running C^h plus higher-priority HC tasks in HI."""
    _tick(query)
    tasks = _hi_interferers(query, hp(query.pivot, query.others()))
    query.count(len(tasks))
    interference = sum(
        psi_h(task, query.consumed(task, TaskMode.HI), query.interval_for(task), query.counting)
        for task in tasks
    )
    own = max(query.pivot.C_hi - query.consumed(query.pivot, TaskMode.HI), 0)
    return interference + own


def dem_overrun(query: DemandQuery) -> int:
    """
    Demand of a HC pivot overrunning to C^h against every HC task in HI,
    whatever its priority, plus the higher-priority LC tasks.
    """
    _tick(query)
    own = max(query.pivot.C_hi - query.consumed(query.pivot, TaskMode.HI), 0)
    return w_h_hi(query) + w_l(query) + own


def dem_guarded(query: DemandQuery) -> int:
    """DEM with the pivot itself overrunning to C^h."""
    _tick(query)
    own = max(query.pivot.C_hi - query.consumed(query.pivot, TaskMode.LO), 0)
    return w_h_hi(query) + w_h_lo(query) + w_l(query) + own


def shrink_mu(T_j: int, delta: int, window: int, wcet: Optional[int] = None) -> Fraction:
    """
    Per-period shrink of an LC task that spreads delta over window.

    mu = T_j * delta / (window + delta); the shrunk period T_j - mu must stay
    above the task's WCET when one is given.
    """
    if window <= 0:
        raise ValueError(f"shrink window must be positive, got {window}")
    if delta < 0:
        raise ValueError(f"shrink amount must be non-negative, got {delta}")
    mu = Fraction(T_j * delta, window + delta)
    if wcet is not None and delta > 0 and mu >= T_j - wcet:
        raise InfeasibleShrinkError(
            f"infeasible shrink: mu={mu} leaves period {T_j - mu} for wcet {wcet}"
        )
    return mu


def _shrink_params(query: DemandQuery) -> Tuple[int, int, int]:
    if query.lc_shrink is None:
        raise ValueError("shrunk workload needs lc_shrink=(delta, eta)")
    delta, eta = query.lc_shrink
    window = query.deadline - eta
    return delta, eta, window


def w_l_shrunk(query: DemandQuery) -> int:
    """
    Higher-priority LC workload once their periods are shortened by mu:
    sum of C_j * ceil((T_i - eta) / (T_j - mu_j)).
    """
    delta, eta, window = _shrink_params(query)
    tasks = [task for task in hp(query.pivot, query.others()) if not task.is_hc]
    query.count(len(tasks))
    span = query.window.b - (eta - query.base)
    total = 0
    for task in tasks:
        mu = shrink_mu(task.T, delta, window, wcet=task.C_lo)
        total += task.C_lo * math.ceil(Fraction(span) / (task.T - mu))
    return total


def dem_delta(query: DemandQuery) -> int:
    """DEM of the pivot at eta with LC periods shrunk to absorb delta."""
    _tick(query)
    delta, eta, _ = _shrink_params(query)
    at_eta = DemandQuery(
        pivot=query.pivot,
        t=eta,
        snapshot=query.snapshot,
        lc_shrink=query.lc_shrink,
        horizon=query.horizon,
        anchoring=query.anchoring,
        counters=query.counters,
        counting=query.counting,
    )
    own = max(query.pivot.C_lo - at_eta.consumed(query.pivot, TaskMode.LO), 0)
    return w_h_hi(at_eta) + w_h_lo(at_eta) + w_l_shrunk(at_eta) + own


_DEMAND = {
    DemandKind.NORMAL: dem,
    DemandKind.CRITICAL: dem_c,
    DemandKind.SHRINK: dem_delta,
    DemandKind.OVERRUN: dem_overrun,
    DemandKind.GUARDED: dem_guarded,
}


def dbf(
    kind: DemandKind,
    pivot: Task,
    iv: Interval,
    snapshot: Snapshot,
    anchoring: Anchoring = Anchoring.RELEASE,
    counters: Optional[DemandCounters] = None,
    counting: Counting = Counting.FITTING,
) -> int:
    """DEM / DEM^c / DEM^delta with the pivot horizon moved to iv.b."""
    query = DemandQuery(
        pivot=pivot,
        t=int(iv.a),
        snapshot=snapshot,
        lc_shrink=snapshot.lc_shrink if kind is DemandKind.SHRINK else None,
        horizon=int(iv.b),
        anchoring=anchoring,
        counters=counters,
        counting=counting,
    )
    return _DEMAND[kind](query)


def busy_window(
    kind: DemandKind,
    pivot: JobState,
    snapshot: Snapshot,
    start: int,
    anchoring: Anchoring = Anchoring.RELEASE,
    counters: Optional[DemandCounters] = None,
    least: bool = True,
) -> Tuple[Optional[int], int]:
    """
    Least z in (0, window] with DBF(z) <= z under request counting, or None
    when the pivot's window closes first; also the bound at the window end.
    The bound is a non-decreasing step function of z, so iterating
    z <- DBF(z) from z = 1 stops at the least closure. With ``least=False``
    a window end that already closes is returned as is.
    """
    window = pivot.abs_deadline - start
    if window <= 0:
        return None, 0

    def bound(z: int) -> int:
        return dbf(kind, pivot.task, Interval(start, start + z), snapshot, anchoring, counters, Counting.RELEASED)

    at_end = bound(window)
    if at_end <= window and not least:
        return window, at_end
    z = 1
    while z <= window:
        demand = bound(z)
        if demand <= z:
            return z, demand
        z = demand
    return None, at_end


@dataclass
class DemandRow:
    pivot: str
    t: int
    z: int
    demand: int
    supply: int
    schedulable: bool


@dataclass
class SchedulabilityResult:
    theorem: Theorem
    pivot: str
    schedulable: bool
    witness_z: Optional[int]
    demand: int
    rows: List[DemandRow] = field(default_factory=list)


def _theorem_setup(
    theorem: Theorem, snapshot: Snapshot, pivot_id: Optional[str] = None,
) -> Tuple[DemandKind, JobState]:
    jobs = list(snapshot.jobs.values())
    hc_jobs = [job for job in jobs if job.task.is_hc]
    if theorem is Theorem.T1_NORMAL:
        if snapshot.mode is not SystemMode.NORMAL:
            raise TheoremInapplicableError("theorem inapplicable: T1 needs Normal mode")
        kind, pivot = DemandKind.NORMAL, lp_l(jobs)
    elif theorem is Theorem.T2_ALL_HI:
        if snapshot.mode is not SystemMode.NORMAL or any(job.omega is TaskMode.LO for job in hc_jobs):
            raise TheoremInapplicableError("theorem inapplicable: T2 needs Normal mode with every HC task in HI")
        kind, pivot = DemandKind.CRITICAL, lp_h(jobs)
    elif theorem is Theorem.T3_SHRINKING:
        if snapshot.pattern is not Pattern.SHRINKING or snapshot.lc_shrink is None:
            raise TheoremInapplicableError("theorem inapplicable: T3 needs an active shrinking")
        kind, pivot = DemandKind.SHRINK, lp_l(jobs)
    else:
        if snapshot.mode is not SystemMode.CRITICAL:
            raise TheoremInapplicableError("theorem inapplicable: T4 needs Critical mode")
        kind, pivot = DemandKind.CRITICAL, lp_l(jobs)
    if pivot_id is not None:
        pivot = snapshot.jobs.get(pivot_id)
        if pivot is None or not pivot.task.is_hc:
            raise TheoremInapplicableError(f"theorem inapplicable: {pivot_id} is not a HC task")
        if kind is not DemandKind.CRITICAL and pivot.omega is not TaskMode.LO:
            raise TheoremInapplicableError(f"theorem inapplicable: {pivot_id} is not in LO")
    if pivot is None:
        raise TheoremInapplicableError(f"theorem inapplicable: no pivot task for {theorem.value}")
    return kind, pivot


def demand_curve(
    theorem: Theorem,
    snapshot: Snapshot,
    t: Optional[int] = None,
    anchoring: Anchoring = Anchoring.RELEASE,
    counters: Optional[DemandCounters] = None,
    pivot: Optional[str] = None,
) -> List[DemandRow]:
    """
    Request-bound DBF of the theorem's pivot against supply z over its
    window. A row is kept whenever the demand or the verdict changes, plus
    the window end.
    """
    kind, pivot_job = _theorem_setup(theorem, snapshot, pivot)
    start = snapshot.t if t is None else t
    if kind is DemandKind.SHRINK:
        start = snapshot.lc_shrink[1]
    window = pivot_job.abs_deadline - start
    rows: List[DemandRow] = []
    previous = None
    # demand is a step function of integer z, so every z in (0, window] is checked
    for z in range(1, window + 1):
        demand = dbf(
            kind, pivot_job.task, Interval(start, start + z), snapshot, anchoring, counters, Counting.RELEASED,
        )
        verdict = demand <= z
        if previous != (demand, verdict) or z == window:
            rows.append(
                DemandRow(
                    pivot=pivot_job.task.id,
                    t=start,
                    z=z,
                    demand=demand,
                    supply=z,
                    schedulable=verdict,
                )
            )
            previous = (demand, verdict)
    return rows


def schedulable(
    theorem: Theorem,
    taskset: TaskSet,
    snapshot: Snapshot,
    t: Optional[int] = None,
    anchoring: Anchoring = Anchoring.RELEASE,
    counters: Optional[DemandCounters] = None,
    pivot: Optional[str] = None,
) -> SchedulabilityResult:
    """
    Busy-period closure test: the pivot is schedulable when DBF(z) <= z for
    some z inside its window. On failure the witness is the window end.
    ``pivot`` names a HC task to test in place of the theorem's own pivot.
    """
    if t is not None and t != snapshot.t:
        snapshot = replace(snapshot, t=t)
    kind, pivot_job = _theorem_setup(theorem, snapshot, pivot)
    rows = demand_curve(theorem, snapshot, t, anchoring, counters, pivot)
    pivot = pivot_job.task.id
    if not rows:
        return SchedulabilityResult(theorem, pivot, False, 0, 0, rows)
    for row in rows:
        if row.schedulable:
            return SchedulabilityResult(theorem, pivot, True, row.z, row.demand, rows)
    last = rows[-1]
    return SchedulabilityResult(theorem, pivot, False, last.z, last.demand, rows)


# --- Snapshot files ---

class SnapshotJobSpec(BaseModel):
    """Current job of one task, times in model units."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    release: Optional[Fraction] = None
    deadline: Optional[Fraction] = None
    consumed: Fraction = Fraction(0)
    omega: TaskMode = TaskMode.LO
    status: JobStatus = JobStatus.READY

    @field_validator("release", "deadline", "consumed", mode="before")
    @classmethod
    def _exact(cls, value):
        return as_fraction(value)


class ShrinkSpec(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    delta: Fraction
    eta: Fraction

    @field_validator("delta", "eta", mode="before")
    @classmethod
    def _exact(cls, value):
        return as_fraction(value)


class SnapshotSpec(BaseModel):
    """
    A point-in-time view for the analyzer. Tasks missing from ``jobs`` get a
    fresh job released at the last period boundary, in ``omega`` mode.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    t: Fraction = Fraction(0)
    mode: SystemMode = SystemMode.NORMAL
    pattern: Optional[Pattern] = None
    omega: TaskMode = TaskMode.LO
    lc_shrink: Optional[ShrinkSpec] = None
    jobs: Dict[str, SnapshotJobSpec] = Field(default_factory=dict)

    @field_validator("t", mode="before")
    @classmethod
    def _exact(cls, value):
        return as_fraction(value)


def snapshot_from_spec(spec: SnapshotSpec, taskset: TaskSet) -> Snapshot:
    t = taskset.to_ticks(spec.t)
    jobs: Dict[str, JobState] = {}
    for task in taskset.tasks:
        entry = spec.jobs.get(task.id, SnapshotJobSpec())
        release = taskset.to_ticks(entry.release) if entry.release is not None else t - t % task.T
        deadline = taskset.to_ticks(entry.deadline) if entry.deadline is not None else release + task.T
        omega = entry.omega if task.id in spec.jobs else spec.omega
        omega = omega if task.is_hc else TaskMode.LO
        jobs[task.id] = JobState(
            task=task,
            index=release // task.T,
            release=release,
            abs_deadline=deadline,
            budget=task.wcet(omega),
            status=entry.status,
            lam=taskset.to_ticks(entry.consumed),
            omega=omega,
        )
    lc_shrink = None
    if spec.lc_shrink is not None:
        lc_shrink = (taskset.to_ticks(spec.lc_shrink.delta), taskset.to_ticks(spec.lc_shrink.eta))
    pattern = spec.pattern
    if pattern is None:
        if spec.mode is SystemMode.CRITICAL:
            pattern = Pattern.STRETCHING
        elif lc_shrink is not None:
            pattern = Pattern.SHRINKING
        else:
            pattern = Pattern.REGULAR
    return Snapshot(t=t, jobs=jobs, mode=spec.mode, pattern=pattern, lc_shrink=lc_shrink)


def load_snapshot(source: Union[str, dict], taskset: TaskSet) -> Snapshot:
    try:
        raw = json.loads(source, parse_float=Fraction) if isinstance(source, str) else source
    except json.JSONDecodeError as exc:
        raise TasksetParseError(f"snapshot is not valid JSON: {exc}") from exc
    try:
        spec = SnapshotSpec.model_validate(raw or {})
    except ValidationError as exc:
        raise TasksetParseError(f"malformed snapshot: {exc.errors()[0]['msg']}") from exc
    return snapshot_from_spec(spec, taskset)
