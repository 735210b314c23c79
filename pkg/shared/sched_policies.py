"""
The three arbitration functions as lexicographic keys over ready jobs.

Sched   -> PriorityOnly:              (rho)
Sched_I -> ModeThenPriority:          (omega, rho), LC jobs rank as LO
Sched_C -> CritThenModeThenPriority:  (chi, omega, rho)

Smaller rho is higher priority; priorities are distinct, so every key is total.
"""
from enum import Enum
from typing import Iterable, Optional, Set

from shared.mc_model import JobState, JobStatus, SystemMode, Task, TaskMode


class PolicyKind(str, Enum):
    PRIORITY_ONLY = "PriorityOnly"
    MODE_THEN_PRIORITY = "ModeThenPriority"
    CRIT_THEN_MODE_THEN_PRIORITY = "CritThenModeThenPriority"


def ready(job: JobState, t: int) -> bool:
    return job.release <= t < job.abs_deadline and job.status is not JobStatus.DONE


def hp(pivot: Task, candidates: Iterable[Task]) -> Set[Task]:
    """Tasks with strictly higher priority than the pivot."""
    return {task for task in candidates if task.rho < pivot.rho}


def _key(policy: PolicyKind, job: JobState):
    if policy is PolicyKind.PRIORITY_ONLY:
        return (-job.task.rho,)
    # LC jobs never leave LO, which makes them comparable to HC jobs in LO
    omega = job.omega.rank if job.task.is_hc else 0
    if policy is PolicyKind.MODE_THEN_PRIORITY:
        return (omega, -job.task.rho)
    return (job.task.chi.rank, omega, -job.task.rho)


def pick(policy: PolicyKind, jobs: Iterable[JobState], t: int) -> Optional[JobState]:
    """The unique maximum among ready jobs, or None when the processor idles."""
    best = None
    best_key = None
    for job in jobs:
        if not ready(job, t):
            continue
        key = _key(policy, job)
        if best is None or key > best_key:
            best, best_key = job, key
    return best


def lp_l(jobs: Iterable[JobState]) -> Optional[JobState]:
    """Lowest-priority HC job in LO that still has work in its current period."""
    candidates = [
        job for job in jobs
        if job.task.is_hc and job.omega is TaskMode.LO and job.status is not JobStatus.DONE
    ]
    return max(candidates, key=lambda job: job.task.rho, default=None)


def lp_h(jobs: Iterable[JobState]) -> Optional[JobState]:
    """Lowest-priority HC job in HI that still has work in its current period."""
    candidates = [
        job for job in jobs
        if job.task.is_hc and job.omega is TaskMode.HI and job.status is not JobStatus.DONE
    ]
    return max(candidates, key=lambda job: job.task.rho, default=None)


def active_policy(mode: SystemMode, jobs: Iterable[JobState]) -> PolicyKind:
    if mode is SystemMode.CRITICAL:
        return PolicyKind.CRIT_THEN_MODE_THEN_PRIORITY
    if any(job.task.is_hc and job.omega is TaskMode.HI for job in jobs):
        return PolicyKind.MODE_THEN_PRIORITY
    return PolicyKind.PRIORITY_ONLY
