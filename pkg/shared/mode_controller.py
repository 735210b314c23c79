"""
Task-level and system-level mode machinery.

Per job: LO -> HI when a HC job has consumed C^l and still has work, back to
LO on refresh at period expiry. System-wide: Normal -> Critical as soon as a
pending HC job in LO has no busy-window closure before its deadline; every LC
period is stretched by the trigger's remaining time and the stretch accrues
as debt ``delta``. Critical -> Normal at the trigger's period expiry, after
which shrink plans pay the debt back by shortening LC periods. A plan lives
until its pivot window ends or the system turns Critical again; whatever it
has not taken by then goes back to ``delta``.
"""
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Set, Tuple

from config.logging_config import get_logger
from shared.errors import InfeasibleShrinkError, ModeControllerError
from shared.mc_model import JobState, JobStatus, Pattern, SystemMode, TaskMode
from shared.sched_policies import lp_l
from shared.trace_export import EventKind, TraceEvent
from shared.workload import (
    Anchoring,
    DemandCounters,
    DemandKind,
    DemandQuery,
    Snapshot,
    busy_window,
    dem_delta,
    shrink_mu,
)

logger = get_logger(__name__)


@dataclass
class Trigger:
    task_id: str
    S: int
    release: int
    expiry: int


@dataclass
class ShrinkPlan:
    """Per-task shrink schedule: each LC release shortens its period by min(cap, remaining)."""

    d: int
    eta: int
    pivot: str
    window_end: int
    mu: Dict[str, Fraction]
    cap: Dict[str, int]
    remaining: Dict[str, int]

    def take(self, task_id: str) -> int:
        left = self.remaining.get(task_id, 0)
        amount = min(self.cap.get(task_id, 0), left)
        if amount:
            self.remaining[task_id] = left - amount
        return amount

    @property
    def done(self) -> bool:
        return not any(self.remaining.values())


@dataclass
class SystemState:
    mode: SystemMode = SystemMode.NORMAL
    pattern: Pattern = Pattern.REGULAR
    trigger: Optional[Trigger] = None
    delta: int = 0
    eta: Optional[int] = None
    plan: Optional[ShrinkPlan] = None
    # ticks each LC task's release grid runs behind nominal
    lags: Dict[str, int] = field(default_factory=dict)
    stretched: int = 0
    shrunk: int = 0
    last_plan_window: Optional[Tuple[str, int]] = None
    nested_seen: Set[Tuple[str, int]] = field(default_factory=set)

    def snapshot(self, t: int, jobs: Dict[str, JobState]) -> Snapshot:
        if self.plan is None:
            return Snapshot(t=t, jobs=jobs, mode=self.mode, pattern=self.pattern)
        cut = {task_id: self.plan.cap[task_id] for task_id, left in self.plan.remaining.items() if left > 0}
        return Snapshot(
            t=t, jobs=jobs, mode=self.mode, pattern=self.pattern,
            lc_shrink=(self.plan.d, self.plan.eta), period_cut=cut,
        )


def _event(t: int, kind: EventKind, task: Optional[str] = None, **detail) -> TraceEvent:
    return TraceEvent(t=t, kind=kind, task=task, detail=detail)


def on_budget_tick(job: JobState, t: int) -> List[TraceEvent]:
    """LO -> HI once a HC job has used C^l and its budget is larger than C^l."""
    task = job.task
    if (
        task.is_hc
        and job.status is not JobStatus.DONE
        and job.omega is TaskMode.LO
        and job.lam >= task.C_lo
        and job.budget > task.C_lo
    ):
        job.omega = TaskMode.HI
        logger.debug("Task mode switch", task=task.id, t=t, job=job.index)
        return [_event(t, EventKind.TASK_MODE_SWITCH, task.id, job=job.index, to=TaskMode.HI.value, lam=job.lam)]
    return []


def on_period_expiry(job: JobState, t: int, state: SystemState) -> List[TraceEvent]:
    """
    Close the current period of ``job``: record a miss if work is left, refresh
    Omega and Lambda, and switch back to Normal if this is the trigger job.
    """
    events: List[TraceEvent] = []
    task = job.task
    if job.status is not JobStatus.DONE:
        lateness = job.remaining
        events.append(
            _event(
                t, EventKind.DEADLINE_MISS, task.id,
                job=job.index, lateness=lateness, criticality=task.chi.value,
                response=t - job.release + lateness,
            )
        )
        if task.is_hc:
            logger.warning("HC deadline miss", task=task.id, t=t, lateness=lateness)
        else:
            logger.debug("LC deadline miss", task=task.id, t=t, lateness=lateness)
        job.status = JobStatus.DONE
    is_trigger = (
        state.mode is SystemMode.CRITICAL
        and state.trigger is not None
        and state.trigger.task_id == task.id
        and state.trigger.expiry == t
    )
    job.refresh()
    events.append(_event(t, EventKind.REFRESH, task.id, job=job.index))
    if is_trigger:
        events.extend(switch_back(state, t))
    return events


def apply_stretch(lc_jobs: Iterable[JobState], amount: int, t: int, state: SystemState) -> List[TraceEvent]:
    """Extend each LC job's period by ``amount``; postponement beyond slack is a discard."""
    events: List[TraceEvent] = []
    if amount <= 0:
        return events
    for job in lc_jobs:
        task = job.task
        job.abs_deadline += amount
        state.lags[task.id] = state.lags.get(task.id, 0) + amount
        exceeds = job.pending and amount > task.slack
        events.append(
            _event(
                t, EventKind.STRETCH_APPLIED, task.id,
                job=job.index, amount=amount, slack=task.slack, deadline=job.abs_deadline,
            )
        )
        if exceeds and not job.discarded:
            job.discarded = True
            events.append(_event(t, EventKind.DISCARD, task.id, job=job.index, reason="stretch", dropped=False))
    return events


def enter_critical(
    state: SystemState,
    trigger_job: JobState,
    t: int,
    jobs: Dict[str, JobState],
    stretch: bool = True,
    **detail,
) -> List[TraceEvent]:
    if state.mode is SystemMode.CRITICAL:
        raise ModeControllerError("critical switch while already in Critical mode")
    events: List[TraceEvent] = []
    if state.plan is not None:
        events.extend(retire_plan(state, t, "critical"))
    S = t - trigger_job.release
    amount = trigger_job.task.T - S if stretch else 0
    state.mode = SystemMode.CRITICAL
    state.pattern = Pattern.STRETCHING
    state.trigger = Trigger(trigger_job.task.id, S, trigger_job.release, trigger_job.abs_deadline)
    state.delta += amount
    state.stretched += amount
    logger.info(
        "Critical mode entered",
        trigger=trigger_job.task.id, t=t, S=S, stretch=amount, delta=state.delta,
    )
    events.append(
        _event(
            t, EventKind.SYSTEM_MODE_SWITCH, trigger_job.task.id,
            to=SystemMode.CRITICAL.value, pattern=state.pattern.value,
            S=S, period=trigger_job.task.T, expiry=trigger_job.abs_deadline,
            stretch=amount, delta=state.delta, **detail,
        )
    )
    if stretch:
        lc_jobs = [job for job in jobs.values() if not job.task.is_hc]
        events.extend(apply_stretch(sorted(lc_jobs, key=lambda job: job.task.rho), amount, t, state))
    return events


def _pending_lo_hc(jobs: Iterable[JobState], t: int) -> List[JobState]:
    """Released, unfinished HC jobs in LO, lowest priority first."""
    found = [
        job for job in jobs
        if job.task.is_hc and job.pending and job.omega is TaskMode.LO and job.release <= t
    ]
    return sorted(found, key=lambda job: job.task.rho, reverse=True)


def check_system_switch(
    state: SystemState,
    snapshot: Snapshot,
    t: int,
    anchoring: Anchoring = Anchoring.RELEASE,
    counters: Optional[DemandCounters] = None,
) -> List[TraceEvent]:
    """
    Enter Critical once some pending HC job in LO has no busy-window closure
    before its deadline; lp_l(t) is tried first. The trigger is that job.
    While already Critical a failing job is only reported as NestedPressure.
    """
    for job in _pending_lo_hc(snapshot.jobs.values(), t):
        closure, demand = busy_window(DemandKind.NORMAL, job, snapshot, t, anchoring, counters, least=False)
        if closure is not None:
            continue
        supply = job.abs_deadline - t
        if state.mode is SystemMode.CRITICAL:
            key = (job.task.id, job.release)
            if key in state.nested_seen:
                continue
            state.nested_seen.add(key)
            logger.warning("Nested pressure while critical", task=job.task.id, t=t, demand=demand, supply=supply)
            return [_event(t, EventKind.NESTED_PRESSURE, job.task.id, demand=demand, supply=supply)]
        return enter_critical(state, job, t, snapshot.jobs, demand=demand, supply=supply)
    return []


def switch_back(state: SystemState, t: int) -> List[TraceEvent]:
    if state.mode is not SystemMode.CRITICAL or state.trigger is None:
        raise ModeControllerError(f"switch back requested at t={t} while in Normal mode")
    trigger = state.trigger
    state.mode = SystemMode.NORMAL
    state.pattern = Pattern.SHRINKING if state.plan is not None else Pattern.REGULAR
    state.trigger = None
    state.eta = t
    state.nested_seen.clear()
    logger.info("Normal mode restored", trigger=trigger.task_id, t=t, delta=state.delta)
    return [
        _event(
            t, EventKind.SYSTEM_MODE_SWITCH, trigger.task_id,
            to=SystemMode.NORMAL.value, pattern=state.pattern.value, eta=t, delta=state.delta,
        )
    ]


def _plan_for(d: int, t: int, pivot: JobState, lc_jobs: List[JobState]) -> Optional[ShrinkPlan]:
    """A plan absorbing ``d`` on every LC task, or None if some task cannot take it."""
    window = pivot.abs_deadline - t
    if window <= 0:
        return None
    mu: Dict[str, Fraction] = {}
    cap: Dict[str, int] = {}
    for job in lc_jobs:
        task = job.task
        try:
            mu[task.id] = shrink_mu(task.T, d, window, wcet=task.C_lo)
        except InfeasibleShrinkError:
            return None
        cap[task.id] = math.floor(mu[task.id])
        releases = math.ceil(Fraction(window) / (task.T - mu[task.id]))
        if cap[task.id] < 1 or releases * cap[task.id] < d:
            return None
    return ShrinkPlan(
        d=d, eta=t, pivot=pivot.task.id, window_end=pivot.abs_deadline,
        mu=mu, cap=cap, remaining={task_id: d for task_id in mu},
    )


def _closes_under(plan: ShrinkPlan, snapshot: Snapshot, t: int, anchoring: Anchoring, counters) -> bool:
    """
    Every pending HC job in LO still closes with the plan's cuts in place,
    and one that could absorb its own overrun before the cuts still can.
    """
    jobs = dict(snapshot.jobs)
    for task_id, job in snapshot.jobs.items():
        if not job.task.is_hc and job.release == t and not job.shortened:
            jobs[task_id] = replace(job, abs_deadline=job.abs_deadline - min(plan.cap[task_id], plan.d))
    cut = Snapshot(
        t=t, jobs=jobs, mode=snapshot.mode, pattern=Pattern.SHRINKING,
        lc_shrink=(plan.d, t), period_cut=dict(plan.cap),
    )
    def closes(kind: DemandKind, job: JobState, view: Snapshot) -> bool:
        return busy_window(kind, job, view, t, anchoring, counters, least=False)[0] is not None

    for job in _pending_lo_hc(jobs.values(), t):
        if not closes(DemandKind.NORMAL, job, cut):
            return False
        if closes(DemandKind.GUARDED, snapshot.jobs[job.task.id], snapshot) and not closes(DemandKind.GUARDED, job, cut):
            return False
    return True


def try_shrink(
    state: SystemState,
    snapshot: Snapshot,
    t: int,
    one_go: bool = False,
    anchoring: Anchoring = Anchoring.RELEASE,
    counters: Optional[DemandCounters] = None,
) -> Tuple[Optional[ShrinkPlan], List[TraceEvent]]:
    """
    Take the whole debt when it fits, otherwise binary-search the largest
    d < delta whose shrunk LC workload keeps lp_l(t) inside its window and
    leaves every pending HC job in LO a busy-window closure; then install the
    plan. LC jobs released at t are shortened immediately.
    """
    if state.mode is not SystemMode.NORMAL or state.delta <= 0 or state.plan is not None:
        return None, []
    pivot = lp_l(snapshot.jobs.values())
    if pivot is None:
        return None, []
    window_key = (pivot.task.id, pivot.release)
    if state.last_plan_window == window_key:
        return None, []
    lc_jobs = sorted((job for job in snapshot.jobs.values() if not job.task.is_hc), key=lambda job: job.task.rho)
    supply = pivot.abs_deadline - t

    def feasible(d: int) -> Optional[ShrinkPlan]:
        plan = _plan_for(d, t, pivot, lc_jobs)
        if plan is None:
            return None
        shrunk = Snapshot(t=t, jobs=snapshot.jobs, mode=snapshot.mode, pattern=Pattern.SHRINKING, lc_shrink=(d, t))
        query = DemandQuery(
            pivot=pivot.task, t=t, snapshot=shrunk, lc_shrink=(d, t),
            anchoring=anchoring, counters=counters,
        )
        try:
            demand = dem_delta(query)
        except InfeasibleShrinkError:
            return None
        if demand > supply:
            return None
        return plan if _closes_under(plan, snapshot, t, anchoring, counters) else None

    # the whole debt first; tick caps make feasibility non-monotone in d
    best = feasible(state.delta)
    if best is None and not one_go:
        lo, hi = 0, state.delta - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            plan = feasible(mid)
            if plan is not None:
                lo, best = mid, plan
            else:
                hi = mid - 1
    if best is None:
        logger.debug("Shrink deferred", t=t, pivot=pivot.task.id, delta=state.delta)
        return None, []

    state.plan = best
    state.last_plan_window = window_key
    state.delta -= best.d
    state.shrunk += best.d
    state.pattern = Pattern.SHRINKING
    logger.info("Shrink plan installed", t=t, d=best.d, delta=state.delta, pivot=pivot.task.id)
    shortened = {}
    for job in lc_jobs:
        if job.release == t:
            shortened[job.task.id] = shrink_release(state, job)
    events = [
        _event(
            t, EventKind.SHRINK_APPLIED, pivot.task.id,
            d=best.d, delta=state.delta, eta=t, window_end=best.window_end,
            mu={task_id: str(value) for task_id, value in best.mu.items()},
            shortened=shortened,
        )
    ]
    return best, events


def _finish_plan(state: SystemState) -> None:
    state.plan = None
    if state.mode is SystemMode.NORMAL:
        state.pattern = Pattern.REGULAR


def retire_plan(state: SystemState, t: int, reason: str) -> List[TraceEvent]:
    """
    Drop the active plan and hand back what it has not taken yet. Tasks
    retire unevenly; only the smaller leftover becomes debt again, so no LC
    grid is ever pulled ahead of nominal.
    """
    plan = state.plan
    if plan is None:
        return []
    returned = min(plan.remaining.values(), default=0)
    state.delta += returned
    state.shrunk -= returned
    _finish_plan(state)
    logger.info("Shrink plan retired", t=t, reason=reason, returned=returned, delta=state.delta)
    return [
        _event(
            t, EventKind.SHRINK_APPLIED, plan.pivot,
            d=-returned, delta=state.delta, retired=reason, returned=returned,
        )
    ]


def shrink_release(state: SystemState, job: JobState) -> int:
    """
    Shorten a freshly released LC period according to the active plan; returns
    the ticks taken. Only Normal-mode releases inside the plan window are cut,
    and each job at most once.
    """
    plan = state.plan
    if plan is None or job.task.is_hc or state.mode is not SystemMode.NORMAL:
        return 0
    if job.shortened or job.release >= plan.window_end:
        return 0
    amount = plan.take(job.task.id)
    if amount:
        job.abs_deadline -= amount
        job.shortened = amount
        state.lags[job.task.id] = state.lags.get(job.task.id, 0) - amount
    if plan.done:
        _finish_plan(state)
        logger.debug("Shrink plan completed", d=plan.d, task=job.task.id)
    return amount
