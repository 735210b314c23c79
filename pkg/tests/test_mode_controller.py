import json
from fractions import Fraction

import pytest

from shared.errors import ModeControllerError
from shared.mc_model import Criticality, JobState, JobStatus, Pattern, SystemMode, Task, TaskMode
from shared.mode_controller import (
    SystemState,
    apply_stretch,
    check_system_switch,
    enter_critical,
    on_budget_tick,
    on_period_expiry,
    retire_plan,
    shrink_release,
    switch_back,
    try_shrink,
)
from shared.trace_export import EventKind
from shared.workload import Snapshot, load_snapshot


def _job(task, release=0, budget=None, lam=0, omega=TaskMode.LO):
    return JobState(task=task, index=release // task.T, release=release, abs_deadline=release + task.T,
                    budget=task.C_lo if budget is None else budget, lam=lam, omega=omega)


@pytest.fixture
def overrun_instant(table1):
    """Table I at t=30 of the second period: pi1 has run 5 of 7 ticks, pi3 is done."""
    jobs = {task.id: _job(task, release=20) for task in table1.tasks}
    jobs["pi1"].budget, jobs["pi1"].lam, jobs["pi1"].omega = 7, 5, TaskMode.HI
    jobs["pi3"].lam, jobs["pi3"].status = 5, JobStatus.DONE
    return Snapshot(t=30, jobs=jobs)


@pytest.fixture
def fig5_snapshot(fig5, fixtures_dir):
    raw = json.loads((fixtures_dir / "fig5.json").read_text(), parse_float=Fraction)
    return load_snapshot(raw["snapshot"], fig5)


# --- task level ---

def test_budget_tick_switches_overrunning_hc_job(table1):
    job = _job(table1.by_id("pi1"), budget=7, lam=5)
    events = on_budget_tick(job, 5)
    assert job.omega is TaskMode.HI
    assert [event.kind for event in events] == [EventKind.TASK_MODE_SWITCH]
    assert events[0].detail["to"] == "HI"
    assert on_budget_tick(job, 6) == []


def test_budget_tick_ignores_jobs_within_c_lo(table1):
    hc = _job(table1.by_id("pi1"), lam=5)
    assert on_budget_tick(hc, 5) == []
    assert hc.omega is TaskMode.LO
    early = _job(table1.by_id("pi1"), budget=7, lam=4)
    assert on_budget_tick(early, 4) == []
    lc = _job(table1.by_id("pi3"), lam=5)
    assert on_budget_tick(lc, 5) == []


def test_period_expiry_records_miss_and_refreshes(table1):
    job = _job(table1.by_id("pi2"), release=20, lam=4, omega=TaskMode.HI)
    events = on_period_expiry(job, 40, SystemState())
    assert [event.kind for event in events] == [EventKind.DEADLINE_MISS, EventKind.REFRESH]
    assert events[0].detail["lateness"] == 1
    assert events[0].detail["response"] == 21
    assert (job.omega, job.lam, job.status) == (TaskMode.LO, 0, JobStatus.DONE)


def test_period_expiry_without_miss(table1):
    job = _job(table1.by_id("pi2"))
    job.lam, job.status = 5, JobStatus.DONE
    events = on_period_expiry(job, 20, SystemState())
    assert [event.kind for event in events] == [EventKind.REFRESH]


# --- stretching ---

def test_stretch_zero_is_noop(table1):
    job = _job(table1.by_id("pi4"))
    state = SystemState()
    assert apply_stretch([job], 0, 0, state) == []
    assert job.abs_deadline == 20
    assert state.lags == {}


def test_stretch_within_slack(table1):
    job = _job(table1.by_id("pi4"), release=20)
    state = SystemState()
    events = apply_stretch([job], 10, 30, state)
    assert job.abs_deadline == 50
    assert state.lags == {"pi4": 10}
    assert [event.kind for event in events] == [EventKind.STRETCH_APPLIED]
    assert not job.discarded


def test_stretch_beyond_slack_discards(table1):
    job = _job(table1.by_id("pi4"), release=40)
    state = SystemState()
    events = apply_stretch([job], 20, 40, state)
    assert job.discarded
    assert [event.kind for event in events] == [EventKind.STRETCH_APPLIED, EventKind.DISCARD]
    assert events[1].detail == {"job": 2, "reason": "stretch", "dropped": False}


# --- system level ---

def test_system_switch_at_overrun(overrun_instant):
    state = SystemState()
    events = check_system_switch(state, overrun_instant, 30)
    assert state.mode is SystemMode.CRITICAL
    assert state.pattern is Pattern.STRETCHING
    assert state.trigger.task_id == "pi2"
    assert (state.trigger.S, state.trigger.expiry) == (10, 40)
    assert state.delta == 10
    switch = events[0]
    assert switch.kind is EventKind.SYSTEM_MODE_SWITCH
    assert (switch.detail["demand"], switch.detail["supply"], switch.detail["stretch"]) == (11, 10, 10)
    assert overrun_instant.jobs["pi3"].abs_deadline == 50
    assert overrun_instant.jobs["pi4"].abs_deadline == 50


def test_no_switch_below_supply(table1):
    state = SystemState()
    assert check_system_switch(state, Snapshot.synchronous(table1), 0) == []
    assert state.mode is SystemMode.NORMAL


def test_nested_pressure_reported_once(overrun_instant):
    state = SystemState()
    check_system_switch(state, overrun_instant, 30)
    first = check_system_switch(state, overrun_instant, 30)
    assert [event.kind for event in first] == [EventKind.NESTED_PRESSURE]
    assert check_system_switch(state, overrun_instant, 30) == []
    assert state.delta == 10


def test_second_critical_entry_rejected(overrun_instant):
    state = SystemState()
    check_system_switch(state, overrun_instant, 30)
    with pytest.raises(ModeControllerError):
        enter_critical(state, overrun_instant.jobs["pi2"], 30, overrun_instant.jobs)


def test_trigger_expiry_switches_back(overrun_instant):
    state = SystemState()
    check_system_switch(state, overrun_instant, 30)
    trigger = overrun_instant.jobs["pi2"]
    trigger.lam, trigger.status = 5, JobStatus.DONE
    events = on_period_expiry(trigger, 40, state)
    assert events[-1].kind is EventKind.SYSTEM_MODE_SWITCH
    assert events[-1].detail["to"] == "Normal"
    assert state.mode is SystemMode.NORMAL
    assert state.eta == 40
    assert state.delta == 10


def test_switch_back_in_normal_raises():
    with pytest.raises(ModeControllerError):
        switch_back(SystemState(), 12)


# --- shrinking ---

def test_shrink_without_debt(fig5_snapshot):
    assert try_shrink(SystemState(), fig5_snapshot, 30) == (None, [])


def test_fig5_shrink_plan(fig5_snapshot):
    state = SystemState(delta=72)
    plan, events = try_shrink(state, fig5_snapshot, 30)
    assert plan.d == 72
    assert plan.mu == {"pi2": 36, "pi3": 24}
    assert plan.cap == {"pi2": 36, "pi3": 24}
    assert state.delta == 0
    assert state.pattern is Pattern.SHRINKING
    assert events[0].kind is EventKind.SHRINK_APPLIED
    assert events[0].detail["shortened"] == {"pi2": 36, "pi3": 24}
    jobs = fig5_snapshot.jobs
    assert (jobs["pi2"].abs_deadline, jobs["pi3"].abs_deadline) == (105, 80)


def test_fig5_shrunk_releases_tile_to_window_end(fig5, fig5_snapshot):
    state = SystemState(delta=72)
    try_shrink(state, fig5_snapshot, 30)
    pi2, pi3 = fig5.by_id("pi2"), fig5.by_id("pi3")

    second_pi2 = _job(pi2, release=105)
    assert shrink_release(state, second_pi2) == 36
    assert second_pi2.abs_deadline == 180

    deadlines = []
    release = 80
    for _ in range(2):
        job = _job(pi3, release=release)
        shrink_release(state, job)
        deadlines.append(job.abs_deadline)
        release = job.abs_deadline
    assert deadlines == [130, 180]
    assert state.plan is None
    assert state.pattern is Pattern.REGULAR
    assert state.lags == {"pi2": -72, "pi3": -72}


def test_one_go_defers_oversized_debt(fig5_snapshot):
    state = SystemState(delta=1000)
    assert try_shrink(state, fig5_snapshot, 30, one_go=True) == (None, [])
    assert state.delta == 1000


def test_partial_shrink_keeps_remainder(fig5_snapshot):
    state = SystemState(delta=1000)
    plan, _ = try_shrink(state, fig5_snapshot, 30)
    assert 0 < plan.d < 1000
    assert state.delta == 1000 - plan.d
    assert state.shrunk == plan.d


def test_one_plan_per_pivot_window(fig5_snapshot):
    state = SystemState(delta=1000)
    try_shrink(state, fig5_snapshot, 30)
    state.plan = None
    assert try_shrink(state, fig5_snapshot, 30) == (None, [])


def test_no_shrink_while_critical(fig5_snapshot):
    state = SystemState(mode=SystemMode.CRITICAL, delta=72)
    assert try_shrink(state, fig5_snapshot, 30) == (None, [])


def test_shrink_release_skips_critical_mode(fig5, fig5_snapshot):
    state = SystemState(delta=72)
    try_shrink(state, fig5_snapshot, 30)
    state.mode = SystemMode.CRITICAL
    job = _job(fig5.by_id("pi2"), release=105)
    assert shrink_release(state, job) == 0
    assert job.abs_deadline == 216
    assert state.plan.remaining == {"pi2": 36, "pi3": 48}


def test_each_job_is_shortened_once(fig5_snapshot):
    state = SystemState(delta=72)
    try_shrink(state, fig5_snapshot, 30)
    pi3 = fig5_snapshot.jobs["pi3"]
    assert pi3.shortened == 24
    assert shrink_release(state, pi3) == 0
    assert pi3.abs_deadline == 80
    assert state.plan.remaining["pi3"] == 48


def test_plan_stops_at_window_end(fig5, fig5_snapshot):
    state = SystemState(delta=72)
    try_shrink(state, fig5_snapshot, 30)
    late = _job(fig5.by_id("pi3"), release=180)
    assert shrink_release(state, late) == 0
    assert late.abs_deadline == 254

    events = retire_plan(state, 180, "window")
    assert events[0].kind is EventKind.SHRINK_APPLIED
    assert events[0].detail == {"d": -36, "delta": 36, "retired": "window", "returned": 36}
    assert state.plan is None
    assert state.pattern is Pattern.REGULAR
    assert (state.delta, state.shrunk) == (36, 36)
    assert retire_plan(state, 180, "window") == []


def test_critical_entry_cancels_plan(fig5_snapshot):
    state = SystemState(delta=72)
    try_shrink(state, fig5_snapshot, 30)
    events = enter_critical(state, fig5_snapshot.jobs["pi1"], 40, fig5_snapshot.jobs)
    assert state.plan is None
    assert [event.kind for event in events[:2]] == [EventKind.SHRINK_APPLIED, EventKind.SYSTEM_MODE_SWITCH]
    assert events[0].detail["retired"] == "critical"
    assert events[0].detail["d"] == -36
    # 36 returned, then the stretch of 180 - 40 on top
    assert events[1].detail["delta"] == 36 + 140
    assert state.delta == 176
    assert state.pattern is Pattern.STRETCHING


def test_full_compensation_restores_lags(fig5, fig5_snapshot):
    pi2, pi3 = fig5.by_id("pi2"), fig5.by_id("pi3")
    state = SystemState(delta=72, stretched=72)
    apply_stretch([_job(pi2), _job(pi3)], 72, 0, state)
    assert state.lags == {"pi2": 72, "pi3": 72}

    try_shrink(state, fig5_snapshot, 30)
    shrink_release(state, _job(pi2, release=105))
    release = 80
    while state.plan is not None:
        job = _job(pi3, release=release)
        shrink_release(state, job)
        release = job.abs_deadline
    assert state.lags == {"pi2": 0, "pi3": 0}
    assert state.stretched - state.shrunk == state.delta == 0


def test_switch_triggered_by_any_pending_hc_job():
    urgent = Task(id="a", T=10, C_lo=5, C_hi=6, chi=Criticality.HC, rho=1)
    relaxed = Task(id="b", T=100, C_lo=5, C_hi=5, chi=Criticality.HC, rho=2)
    jobs = {"a": _job(urgent), "b": _job(relaxed)}
    state = SystemState()
    events = check_system_switch(state, Snapshot(t=8, jobs=jobs), 8)
    assert state.trigger.task_id == "a"
    assert (events[0].detail["demand"], events[0].detail["supply"]) == (5, 2)
