import pytest

from shared.case_study import run_invariant_sweep
from shared.errors import MissingScriptedBudgetError
from shared.scenario import ScriptedScenario, StochasticScenario, all_lo
from shared.sim_engine import Algorithm, SimulationOptions, check_trace_invariants, simulate
from shared.trace_export import EventKind, TraceEvent


def _of(trace, kind, task=None):
    return [event for event in trace if event.kind is kind and (task is None or event.task == task)]


def _dispatch_order(trace, start, end):
    return [(event.t, event.task) for event in _of(trace, EventKind.DISPATCH) if start <= event.t < end]


@pytest.mark.parametrize("algorithm", [Algorithm.FP_CLASSIC, Algorithm.TASK_LEVEL_ONLY])
def test_fig4_lowest_hc_task_misses(table1, fig4_script, algorithm):
    trace, metrics = simulate(table1, fig4_script, algorithm, 60)
    misses = _of(trace, EventKind.DEADLINE_MISS)
    assert [(event.t, event.task) for event in misses] == [(40, "pi2")]
    assert misses[0].detail["lateness"] == 1
    assert misses[0].detail["response"] == 21
    assert metrics.hc_deadline_misses == 1
    assert metrics.hc_missing_tasks == ["pi2"]
    assert metrics.per_task["pi2"].max_lateness == 1


def test_fig4_fp_dispatch_order(table1, fig4_script):
    trace, _ = simulate(table1, fig4_script, Algorithm.FP_CLASSIC, 40)
    assert _dispatch_order(trace, 20, 40) == [(20, "pi3"), (25, "pi1"), (32, "pi4"), (36, "pi2")]
    assert _of(trace, EventKind.TASK_MODE_SWITCH) == []


def test_fig4_task_level_switches_pi1(table1, fig4_script):
    trace, metrics = simulate(table1, fig4_script, Algorithm.TASK_LEVEL_ONLY, 40)
    switches = _of(trace, EventKind.TASK_MODE_SWITCH)
    assert [(event.t, event.task) for event in switches] == [(30, "pi1")]
    assert metrics.task_mode_switches == 1
    assert metrics.system_switches == 0


def test_fig4_multimode_meets_every_hc_deadline(table1, fig4_script):
    trace, metrics = simulate(table1, fig4_script, Algorithm.MULTIMODE, 80)
    critical = [
        event for event in _of(trace, EventKind.SYSTEM_MODE_SWITCH)
        if event.detail["to"] == "Critical"
    ]
    assert (critical[0].t, critical[0].task) == (30, "pi2")
    assert critical[0].detail["S"] == 10
    assert critical[0].detail["stretch"] == 10
    assert len([event for event in critical if 20 <= event.t < 40]) == 1
    assert _dispatch_order(trace, 30, 40) == [(32, "pi2"), (37, "pi4")]
    assert metrics.hc_deadline_misses == 0
    assert check_trace_invariants(trace, table1) == []


def test_fig4_multimode_switches_back_at_trigger_expiry(table1, fig4_script):
    trace, _ = simulate(table1, fig4_script, Algorithm.MULTIMODE, 80)
    back = [event for event in _of(trace, EventKind.SYSTEM_MODE_SWITCH) if event.detail["to"] == "Normal"]
    assert back[0].t == 40
    assert back[0].task == "pi2"
    assert back[0].detail["delta"] == 10


def test_fig4_system_level_drop(table1, fig4_script):
    trace, metrics = simulate(table1, fig4_script, Algorithm.SYSTEM_LEVEL_DROP, 80)
    drops = _of(trace, EventKind.DISCARD)
    assert [(event.t, event.task, event.detail["reason"]) for event in drops] == [(30, "pi4", "dropped")]
    assert metrics.system_switches == 1
    assert metrics.hc_deadline_misses == 0
    assert metrics.lc_discarded == 1
    assert check_trace_invariants(trace, table1) == []


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_all_lo_matches_fixed_priority(table1, algorithm):
    reference, _ = simulate(table1, all_lo(), Algorithm.FP_CLASSIC, 100)
    trace, metrics = simulate(table1, all_lo(), algorithm, 100)
    assert trace == reference
    assert metrics.system_switches == 0
    assert metrics.hc_deadline_misses == 0


def test_all_lo_first_period(table1):
    trace, metrics = simulate(table1, all_lo(), Algorithm.FP_CLASSIC, 20)
    assert _dispatch_order(trace, 0, 20) == [(0, "pi3"), (5, "pi1"), (10, "pi4"), (14, "pi2")]
    assert _of(trace, EventKind.IDLE)[0].t == 19
    assert metrics.per_task["pi2"].max_response == 19


def test_stochastic_runs_are_deterministic(table1):
    scenario = StochasticScenario(seed=11, overrun_probability=0.5)
    first = simulate(table1, scenario, Algorithm.MULTIMODE, 400)
    second = simulate(table1, scenario, Algorithm.MULTIMODE, 400)
    assert first[0] == second[0]
    assert first[1] == second[1]


def test_missing_scripted_budget(table1):
    with pytest.raises(MissingScriptedBudgetError):
        simulate(table1, ScriptedScenario(), Algorithm.FP_CLASSIC, 20)


def test_horizon_must_be_positive(table1):
    with pytest.raises(ValueError):
        simulate(table1, all_lo(), Algorithm.FP_CLASSIC, 0)


@pytest.mark.parametrize("name, expected", [
    ("fp", Algorithm.FP_CLASSIC),
    ("FPClassic", Algorithm.FP_CLASSIC),
    ("task-level-only", Algorithm.TASK_LEVEL_ONLY),
    ("drop", Algorithm.SYSTEM_LEVEL_DROP),
    ("multimode", Algorithm.MULTIMODE),
    (Algorithm.MULTIMODE, Algorithm.MULTIMODE),
])
def test_algorithm_parse(name, expected):
    assert Algorithm.parse(name) is expected


def test_algorithm_parse_unknown():
    with pytest.raises(ValueError, match="unknown algorithm"):
        Algorithm.parse("edf")


def test_trace_recording_off_keeps_metrics(table1, fig4_script):
    trace, metrics = simulate(table1, fig4_script, Algorithm.FP_CLASSIC, 60, SimulationOptions(record_trace=False))
    assert trace == []
    assert metrics.hc_deadline_misses == 1


def test_theorem_check_on_table1(table1):
    _, metrics = simulate(table1, all_lo(), Algorithm.MULTIMODE, 40, SimulationOptions(check_theorems=True))
    assert metrics.theorem1_passed is True


def test_invariant_checker_flags_idle_with_pending_work(table1):
    trace = [
        TraceEvent(t=0, kind=EventKind.RELEASE, task="a", detail={"job": 0}),
        TraceEvent(t=0, kind=EventKind.IDLE),
    ]
    problems = check_trace_invariants(trace, table1)
    assert len(problems) == 1
    assert "idle with pending" in problems[0]


def test_invariant_checker_flags_short_critical(table1):
    trace = [
        TraceEvent(t=5, kind=EventKind.SYSTEM_MODE_SWITCH, task="a",
                   detail={"to": "Critical", "S": 5, "period": 20, "stretch": 15, "delta": 15}),
        TraceEvent(t=10, kind=EventKind.SYSTEM_MODE_SWITCH, task="a", detail={"to": "Normal", "delta": 15}),
    ]
    problems = check_trace_invariants(trace, table1)
    assert problems == ["t=10: Critical lasted 5 ticks, trigger left 15"]


def test_multimode_invariant_sweep():
    assert run_invariant_sweep(runs=500, seed=5, max_workers=1) == []


def test_fig4_multimode_pays_back_the_stretch(table1, fig4_script):
    trace, metrics = simulate(table1, fig4_script, Algorithm.MULTIMODE, 80)
    plans = [(event.t, event.detail["d"]) for event in _of(trace, EventKind.SHRINK_APPLIED)]
    assert plans == [(45, 5), (65, 5)]
    assert metrics.shrink_plans == 2
    assert (metrics.stretched, metrics.shrunk, metrics.final_delta) == (10, 10, 0)
    assert metrics.final_lags == {"pi3": 0, "pi4": 0}


def test_lc_tasks_carry_no_lag_outside_multimode(table1, fig4_script):
    _, metrics = simulate(table1, fig4_script, Algorithm.SYSTEM_LEVEL_DROP, 80)
    assert (metrics.stretched, metrics.shrunk) == (0, 0)
    assert metrics.final_lags == {"pi3": 0, "pi4": 0}


def test_debt_accounting_over_stochastic_runs(table1):
    for seed in range(10):
        scenario = StochasticScenario(seed=seed, overrun_probability=0.3)
        trace, metrics = simulate(table1, scenario, Algorithm.MULTIMODE, 600)
        assert metrics.stretched - metrics.shrunk == metrics.final_delta
        # no LC grid ever runs ahead of what the remaining debt allows
        assert all(lag >= metrics.final_delta >= 0 for lag in metrics.final_lags.values())
        assert check_trace_invariants(trace, table1) == []


def test_lc_cuts_stay_in_normal_mode_and_plan_window(table1):
    trace, _ = simulate(table1, StochasticScenario(seed=0, overrun_probability=0.3), Algorithm.MULTIMODE, 2000)
    critical = False
    window_end = None
    plans = 0
    for event in trace:
        if event.kind is EventKind.SYSTEM_MODE_SWITCH:
            critical = event.detail["to"] == "Critical"
        elif event.kind is EventKind.SHRINK_APPLIED:
            if "retired" in event.detail:
                window_end = None
            else:
                window_end = event.detail["window_end"]
                plans += 1
        elif event.kind is EventKind.RELEASE and event.detail.get("shortened"):
            assert not critical
            assert window_end is not None and event.t < window_end
    assert plans > 0


def test_table2_all_lo_never_switches(table2):
    _, metrics = simulate(table2, all_lo(), Algorithm.MULTIMODE, 20000, SimulationOptions(record_trace=False))
    assert metrics.system_switches == 0
    assert metrics.hc_deadline_misses == 0
