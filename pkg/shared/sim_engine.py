"""
Discrete-event uniprocessor simulator.

Time advances from one decision instant to the next: a period expiry, the
running job's completion, or the instant it crosses C^l. At every instant the
phases run in a fixed order:

    completions (closed by the previous advance)
    -> expiry / refresh -> retiring a shrink plan whose window closed
    -> release -> overrun detection
    -> system switch check -> shrink check -> dispatch

Every state change is emitted as a TraceEvent and the run metrics are folded
from those events, so the trace and the metrics never disagree.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field

from config.logging_config import get_logger
from config.settings import settings
from shared.errors import TheoremInapplicableError
from shared.mc_model import JobState, JobStatus, SystemMode, TaskMode, TaskSet
from shared.mode_controller import (
    SystemState,
    check_system_switch,
    enter_critical,
    on_budget_tick,
    on_period_expiry,
    retire_plan,
    shrink_release,
    try_shrink,
)
from shared.scenario import BudgetSampler, ScriptedScenario, StochasticScenario
from shared.sched_policies import PolicyKind, active_policy, pick
from shared.trace_export import EventKind, TraceEvent
from shared.workload import Anchoring, DemandCounters, Theorem, schedulable

logger = get_logger(__name__)


class Algorithm(str, Enum):
    FP_CLASSIC = "FPClassic"
    TASK_LEVEL_ONLY = "TaskLevelOnly"
    SYSTEM_LEVEL_DROP = "SystemLevelDrop"
    MULTIMODE = "Multimode"

    @classmethod
    def parse(cls, name: Union[str, "Algorithm"]) -> "Algorithm":
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "").replace("_", "").lower()
        for algorithm in cls:
            if algorithm.value.lower() == key:
                return algorithm
        if key in _ALIASES:
            return _ALIASES[key]
        raise ValueError(f"unknown algorithm: {name}")


_ALIASES = {
    "fp": Algorithm.FP_CLASSIC,
    "task": Algorithm.TASK_LEVEL_ONLY,
    "tasklevel": Algorithm.TASK_LEVEL_ONLY,
    "drop": Algorithm.SYSTEM_LEVEL_DROP,
    "systemlevel": Algorithm.SYSTEM_LEVEL_DROP,
    "multi": Algorithm.MULTIMODE,
}


class TaskMetrics(BaseModel):
    criticality: str
    released: int = 0
    completed: int = 0
    deadline_misses: int = 0
    discarded: int = 0
    max_response: int = 0
    max_lateness: int = 0


class RunMetrics(BaseModel):
    algorithm: Algorithm
    horizon: int
    time_scale: int = 1
    per_task: Dict[str, TaskMetrics] = Field(default_factory=dict)
    lc_released: int = 0
    lc_discarded: int = 0
    hc_deadline_misses: int = 0
    lc_deadline_misses: int = 0
    system_switches: int = 0
    task_mode_switches: int = 0
    nested_pressure: int = 0
    shrink_plans: int = 0
    dem_evaluations: int = 0
    filter_set_size: int = 0
    final_delta: int = 0
    # stretch and shrink ticks applied to every LC task, and where each LC grid ended up
    stretched: int = 0
    shrunk: int = 0
    final_lags: Dict[str, int] = Field(default_factory=dict)
    theorem1_passed: Optional[bool] = None

    @property
    def discard_rate(self) -> float:
        if self.lc_released == 0:
            return 0.0
        return self.lc_discarded / self.lc_released

    @property
    def hc_missing_tasks(self) -> List[str]:
        return sorted(
            task_id for task_id, m in self.per_task.items()
            if m.criticality == "HC" and m.deadline_misses
        )

    def summary(self) -> dict:
        data = self.model_dump(mode="json")
        data["discard_rate"] = self.discard_rate
        return data

    def record(self, event: TraceEvent) -> None:
        kind = event.kind
        m = self.per_task.get(event.task) if event.task else None
        if kind is EventKind.RELEASE and m is not None:
            m.released += 1
            if m.criticality == "LC":
                self.lc_released += 1
        elif kind is EventKind.DISCARD and m is not None:
            m.discarded += 1
            self.lc_discarded += 1
        elif kind is EventKind.DEADLINE_MISS and m is not None:
            m.deadline_misses += 1
            m.max_lateness = max(m.max_lateness, event.detail["lateness"])
            m.max_response = max(m.max_response, event.detail["response"])
            if m.criticality == "HC":
                self.hc_deadline_misses += 1
            else:
                self.lc_deadline_misses += 1
        elif kind is EventKind.COMPLETE and m is not None:
            m.completed += 1
            m.max_response = max(m.max_response, event.detail["response"])
        elif kind is EventKind.TASK_MODE_SWITCH:
            self.task_mode_switches += 1
        elif kind is EventKind.SYSTEM_MODE_SWITCH and event.detail.get("to") == SystemMode.CRITICAL.value:
            self.system_switches += 1
        elif kind is EventKind.NESTED_PRESSURE:
            self.nested_pressure += 1
        elif kind is EventKind.SHRINK_APPLIED and "retired" not in event.detail:
            self.shrink_plans += 1


@dataclass
class SimulationOptions:
    anchoring: Anchoring = Anchoring(settings.demand_anchoring)
    one_go_shrink: bool = settings.shrink_policy == "one_go"
    record_trace: bool = settings.record_trace
    check_theorems: bool = False


class Simulator:
    def __init__(
        self,
        taskset: TaskSet,
        scenario: Union[ScriptedScenario, StochasticScenario],
        algorithm: Algorithm,
        horizon: int,
        options: Optional[SimulationOptions] = None,
    ):
        if horizon < 1:
            raise ValueError(f"horizon must be at least one tick, got {horizon}")
        self.taskset = taskset
        self.algorithm = Algorithm.parse(algorithm)
        self.horizon = horizon
        self.options = options or SimulationOptions()
        self.sampler = BudgetSampler(scenario, taskset)
        self.state = SystemState()
        self.counters = DemandCounters()
        self.jobs: Dict[str, JobState] = {}
        self.order = taskset.by_priority()
        self.running: Optional[JobState] = None
        self.idle = False
        self.trace: List[TraceEvent] = []
        self.metrics = RunMetrics(
            algorithm=self.algorithm,
            horizon=horizon,
            time_scale=taskset.time_scale,
            per_task={task.id: TaskMetrics(criticality=task.chi.value) for task in taskset.tasks},
        )
        self._theorem_results: List[bool] = []

    # --- plumbing ---

    def _emit(self, events: List[TraceEvent]) -> None:
        for event in events:
            self.metrics.record(event)
            if self.options.record_trace:
                self.trace.append(event)

    def _event(self, t: int, kind: EventKind, task: Optional[str] = None, **detail) -> TraceEvent:
        return TraceEvent(t=t, kind=kind, task=task, detail=detail)

    @property
    def _task_modes(self) -> bool:
        return self.algorithm is not Algorithm.FP_CLASSIC

    def _policy(self) -> PolicyKind:
        if self.algorithm is Algorithm.FP_CLASSIC:
            return PolicyKind.PRIORITY_ONLY
        if self.algorithm is Algorithm.TASK_LEVEL_ONLY:
            return active_policy(SystemMode.NORMAL, self.jobs.values())
        return active_policy(self.state.mode, self.jobs.values())

    # --- phases ---

    def _expire(self, t: int) -> Tuple[List[str], bool]:
        expired = []
        switched_back = False
        for task in self.order:
            job = self.jobs.get(task.id)
            if job is None or job.abs_deadline > t:
                continue
            expired.append(task.id)
            if job is self.running:
                self.running = None
            was_critical = self.state.mode is SystemMode.CRITICAL
            events = on_period_expiry(job, t, self.state)
            out = []
            for event in events:
                out.append(event)
                if event.kind is EventKind.DEADLINE_MISS and not task.is_hc and not job.discarded:
                    job.discarded = True
                    out.append(self._event(t, EventKind.DISCARD, task.id, job=job.index, reason="deadline", dropped=True))
            self._emit(out)
            if was_critical and self.state.mode is SystemMode.NORMAL:
                switched_back = True
        return expired, switched_back

    def _release(self, t: int, due: List[str]) -> None:
        plan = self.state.plan
        if self.algorithm is Algorithm.MULTIMODE and plan is not None and t >= plan.window_end:
            self._emit(retire_plan(self.state, t, "window"))
        for task in self.order:
            previous = self.jobs.get(task.id)
            if previous is not None and task.id not in due:
                continue
            index = 0 if previous is None else previous.index + 1
            job = JobState(
                task=task,
                index=index,
                release=t,
                abs_deadline=t + task.T,
                budget=self.sampler.budget(task, index),
            )
            self.jobs[task.id] = job
            if (
                self.algorithm is Algorithm.SYSTEM_LEVEL_DROP
                and self.state.mode is SystemMode.CRITICAL
                and not task.is_hc
            ):
                job.status = JobStatus.DONE
                job.discarded = True
                self._emit([
                    self._event(t, EventKind.RELEASE, task.id, job=index, budget=job.budget,
                                deadline=job.abs_deadline, skipped=True),
                    self._event(t, EventKind.DISCARD, task.id, job=index, reason="skipped", dropped=True),
                ])
                continue
            shrink = 0
            if self.algorithm is Algorithm.MULTIMODE and not task.is_hc:
                shrink = shrink_release(self.state, job)
            self._emit([
                self._event(t, EventKind.RELEASE, task.id, job=index, budget=job.budget,
                            deadline=job.abs_deadline, shortened=shrink),
            ])

    def _detect_overruns(self, t: int) -> None:
        if not self._task_modes:
            return
        for task in self.order:
            job = self.jobs[task.id]
            events = on_budget_tick(job, t)
            if not events:
                continue
            self._emit(events)
            if self.algorithm is Algorithm.SYSTEM_LEVEL_DROP and self.state.mode is SystemMode.NORMAL:
                self._emit(enter_critical(self.state, job, t, self.jobs, stretch=False, reason="overrun"))
                self._drop_lc(t)

    def _drop_lc(self, t: int) -> None:
        for task in self.order:
            job = self.jobs[task.id]
            if task.is_hc or not job.pending:
                continue
            job.status = JobStatus.DONE
            if job is self.running:
                self.running = None
            if not job.discarded:
                job.discarded = True
                self._emit([self._event(t, EventKind.DISCARD, task.id, job=job.index, reason="dropped", dropped=True)])

    def _system_check(self, t: int) -> None:
        if self.algorithm is not Algorithm.MULTIMODE:
            return
        snapshot = self.state.snapshot(t, self.jobs)
        self._emit(check_system_switch(self.state, snapshot, t, self.options.anchoring, self.counters))

    def _shrink_check(self, t: int) -> None:
        if self.algorithm is not Algorithm.MULTIMODE or self.state.mode is not SystemMode.NORMAL:
            return
        if self.state.delta <= 0 or self.state.plan is not None:
            return
        snapshot = self.state.snapshot(t, self.jobs)
        _, events = try_shrink(
            self.state, snapshot, t,
            one_go=self.options.one_go_shrink,
            anchoring=self.options.anchoring,
            counters=self.counters,
        )
        self._emit(events)

    def _check_theorem(self, t: int) -> None:
        if self.state.mode is not SystemMode.NORMAL:
            return
        snapshot = self.state.snapshot(t, self.jobs)
        try:
            result = schedulable(Theorem.T1_NORMAL, self.taskset, snapshot, t, self.options.anchoring)
        except TheoremInapplicableError:
            return
        self._theorem_results.append(result.schedulable)

    def _dispatch(self, t: int) -> None:
        policy = self._policy()
        chosen = pick(policy, self.jobs.values(), t)
        if chosen is self.running and chosen is not None:
            return
        events = []
        if self.running is not None and self.running.pending:
            self.running.status = JobStatus.READY
            events.append(self._event(t, EventKind.PREEMPT, self.running.task.id, job=self.running.index))
        if chosen is not None:
            chosen.status = JobStatus.RUNNING
            if chosen.first_start is None:
                chosen.first_start = t
            events.append(
                self._event(
                    t, EventKind.DISPATCH, chosen.task.id,
                    job=chosen.index, policy=policy.value, mode=self.state.mode.value,
                    pattern=self.state.pattern.value, omega=chosen.omega.value,
                )
            )
            self.idle = False
        elif not self.idle:
            events.append(self._event(t, EventKind.IDLE))
            self.idle = True
        self.running = chosen
        self._emit(events)

    def _advance(self, t: int) -> int:
        next_t = self.horizon
        for job in self.jobs.values():
            if job.abs_deadline > t:
                next_t = min(next_t, job.abs_deadline)
        job = self.running
        if job is None:
            return next_t
        next_t = min(next_t, t + job.remaining)
        task = job.task
        if self._task_modes and task.is_hc and job.omega is TaskMode.LO and job.lam < task.C_lo < job.budget:
            next_t = min(next_t, t + task.C_lo - job.lam)
        job.lam += next_t - t
        if job.lam == job.budget:
            job.status = JobStatus.DONE
            job.finish = next_t
            self.running = None
            self._emit([
                self._event(
                    next_t, EventKind.COMPLETE, task.id,
                    job=job.index, response=next_t - job.release, budget=job.budget, executed=job.lam,
                )
            ])
        return next_t

    def run(self) -> Tuple[List[TraceEvent], RunMetrics]:
        logger.info(
            "Simulation started",
            algorithm=self.algorithm.value, horizon=self.horizon, tasks=len(self.taskset.tasks),
        )
        t = 0
        while True:
            due, switched_back = self._expire(t)
            if t >= self.horizon:
                break
            self._release(t, due)
            if self.options.check_theorems and (t == 0 or switched_back):
                self._check_theorem(t)
            self._detect_overruns(t)
            self._system_check(t)
            self._shrink_check(t)
            self._dispatch(t)
            t = self._advance(t)

        self.metrics.dem_evaluations = self.counters.evaluations
        self.metrics.filter_set_size = self.counters.filter_set_size
        self.metrics.final_delta = self.state.delta
        self.metrics.stretched = self.state.stretched
        self.metrics.shrunk = self.state.shrunk
        self.metrics.final_lags = {task.id: self.state.lags.get(task.id, 0) for task in self.taskset.lc_tasks}
        if self.options.check_theorems:
            self.metrics.theorem1_passed = all(self._theorem_results)
        logger.info(
            "Simulation finished",
            algorithm=self.algorithm.value,
            hc_misses=self.metrics.hc_deadline_misses,
            discard_rate=round(self.metrics.discard_rate, 6),
            system_switches=self.metrics.system_switches,
        )
        return self.trace, self.metrics


def simulate(
    taskset: TaskSet,
    scenario: Union[ScriptedScenario, StochasticScenario],
    algorithm: Union[Algorithm, str],
    horizon: int,
    options: Optional[SimulationOptions] = None,
) -> Tuple[List[TraceEvent], RunMetrics]:
    """Run one simulation over [0, horizon) ticks and return (trace, metrics)."""
    return Simulator(taskset, scenario, Algorithm.parse(algorithm), horizon, options).run()


# --- trace invariants ---

def check_trace_invariants(trace: List[TraceEvent], taskset: TaskSet) -> List[str]:
    """
    Replay a trace and report violations of the structural invariants:
    one running job at a time, no idling with pending work, executed ticks
    equal to the job budget, Critical lasting exactly T - S of the trigger,
    a single trigger, stretch debt bookkeeping and policy coherence.
    """
    violations: List[str] = []
    running: Optional[Tuple[str, int]] = None
    started_at = 0
    executed: Dict[Tuple[str, int], int] = {}
    pending = set()
    hi_tasks = set()
    critical: Optional[TraceEvent] = None
    debt = 0

    def stop(t: int) -> None:
        nonlocal running
        if running is not None:
            executed[running] = executed.get(running, 0) + t - started_at
        running = None

    for event in trace:
        t, kind, task, d = event.t, event.kind, event.task, event.detail
        key = (task, d.get("job"))
        if kind is EventKind.RELEASE:
            if not d.get("skipped"):
                pending.add(key)
        elif kind is EventKind.DISPATCH:
            if running is not None:
                violations.append(f"t={t}: {task} dispatched while {running[0]} still running")
                stop(t)
            running, started_at = key, t
            expected = PolicyKind.CRIT_THEN_MODE_THEN_PRIORITY.value if critical is not None else None
            if expected is not None and d.get("policy") != expected:
                violations.append(f"t={t}: policy {d.get('policy')} while Critical")
            if critical is None and d.get("policy") == PolicyKind.CRIT_THEN_MODE_THEN_PRIORITY.value:
                violations.append(f"t={t}: critical policy while Normal")
            if hi_tasks and d.get("policy") == PolicyKind.PRIORITY_ONLY.value:
                violations.append(f"t={t}: PriorityOnly while {sorted(hi_tasks)} in HI")
        elif kind is EventKind.PREEMPT:
            if running != key:
                violations.append(f"t={t}: preempt of {task} which is not running")
            stop(t)
        elif kind is EventKind.COMPLETE:
            if running != key:
                violations.append(f"t={t}: completion of {task} which is not running")
            stop(t)
            pending.discard(key)
            if executed.get(key, 0) != d.get("budget"):
                violations.append(
                    f"t={t}: {task} job {d.get('job')} executed {executed.get(key, 0)} of budget {d.get('budget')}"
                )
        elif kind in (EventKind.DEADLINE_MISS, EventKind.REFRESH):
            if running == key:
                stop(t)
            pending.discard(key)
            if kind is EventKind.REFRESH:
                hi_tasks.discard(task)
        elif kind is EventKind.DISCARD and d.get("dropped"):
            if running == key:
                stop(t)
            pending.discard(key)
        elif kind is EventKind.IDLE:
            if running is not None:
                stop(t)
            if pending:
                violations.append(f"t={t}: idle with pending jobs {sorted(pending, key=str)}")
        elif kind is EventKind.TASK_MODE_SWITCH:
            hi_tasks.add(task)
        elif kind is EventKind.SYSTEM_MODE_SWITCH:
            if d.get("to") == SystemMode.CRITICAL.value:
                if critical is not None:
                    violations.append(f"t={t}: second trigger {task} while {critical.task} active")
                critical = event
                debt += d.get("stretch", 0)
            else:
                if critical is None:
                    violations.append(f"t={t}: switch back without a trigger")
                else:
                    expected = critical.detail["period"] - critical.detail["S"]
                    if t - critical.t != expected:
                        violations.append(
                            f"t={t}: Critical lasted {t - critical.t} ticks, trigger left {expected}"
                        )
                critical = None
            if d.get("delta") != debt:
                violations.append(f"t={t}: delta {d.get('delta')} but stretch minus shrink is {debt}")
        elif kind is EventKind.SHRINK_APPLIED:
            debt -= d["d"]
            if d.get("delta") != debt:
                violations.append(f"t={t}: delta {d.get('delta')} but stretch minus shrink is {debt}")
    return violations
