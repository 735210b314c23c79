import json
from fractions import Fraction

import pytest

from shared.errors import (
    DuplicatePriorityError,
    DuplicateTaskIdError,
    EmptyTasksetError,
    InfeasibleShrinkError,
    LcWcetMismatchError,
    NoHighCriticalityTaskError,
    NonIntegralTimeError,
    TasksetParseError,
    WcetExceedsPeriodError,
    WcetOrderError,
)
from shared.mc_model import (
    Criticality,
    Task,
    TaskMode,
    dump_taskset,
    hyperperiod,
    load_taskset,
    resolve_fixture,
    utilization,
)


def _doc(*tasks, time_scale=1):
    return json.dumps({"time_scale": time_scale, "tasks": list(tasks)})


def _task(id, period, wcet_lo, criticality="HC", priority=1, **extra):
    return {"id": id, "period": period, "wcet_lo": wcet_lo, "criticality": criticality, "priority": priority, **extra}


def test_table2_scaled_to_ticks(table2):
    assert len(table2.tasks) == 15
    assert len(table2.hc_tasks) == 8
    assert len(table2.lc_tasks) == 7
    pi1 = table2.by_id("pi1")
    assert (pi1.T, pi1.C_lo, pi1.C_hi) == (550, 80, 89)
    assert table2.by_id("pi7").C_hi == table2.by_id("pi7").C_lo == 65


def test_table1_priorities(table1):
    assert [task.rho for task in table1.tasks] == [2, 4, 1, 3]
    assert [task.id for task in table1.by_priority()] == ["pi3", "pi1", "pi4", "pi2"]
    assert table1.time_scale == 1


def test_empty_taskset():
    with pytest.raises(EmptyTasksetError, match="empty taskset"):
        load_taskset(_doc())


def test_malformed_json():
    with pytest.raises(TasksetParseError):
        load_taskset("{not json")


def test_duplicate_priority():
    with pytest.raises(DuplicatePriorityError) as info:
        load_taskset(_doc(_task("a", 10, 1, wcet_hi=2), _task("b", 10, 1, "LC")))
    assert info.value.priority == 1


def test_duplicate_id():
    with pytest.raises(DuplicateTaskIdError):
        load_taskset(_doc(_task("a", 10, 1), _task("a", 10, 1, priority=2)))


def test_wcet_order():
    with pytest.raises(WcetOrderError):
        load_taskset(_doc(_task("a", 10, 5, wcet_hi=4)))


def test_lc_wcet_mismatch():
    with pytest.raises(LcWcetMismatchError):
        load_taskset(_doc(_task("a", 10, 1), _task("b", 10, 2, "LC", priority=2, wcet_hi=3)))


def test_wcet_exceeds_period():
    with pytest.raises(WcetExceedsPeriodError):
        load_taskset(_doc(_task("a", 10, 5, wcet_hi=11)))


def test_no_hc_task():
    with pytest.raises(NoHighCriticalityTaskError):
        load_taskset(_doc(_task("a", 10, 2, "LC")))


def test_fractional_time_needs_scale():
    with pytest.raises(NonIntegralTimeError):
        load_taskset(_doc(_task("a", 55, 8, wcet_hi=8.9)))
    taskset = load_taskset(_doc(_task("a", 55, 8, wcet_hi=8.9), time_scale=10))
    assert taskset.tasks[0].C_hi == 89


def test_rational_period():
    taskset = load_taskset(_doc(_task("a", "37/3", 1), time_scale=6))
    assert taskset.tasks[0].T == 74


def test_utilization_examples(table1):
    assert utilization(table1.by_id("pi1"), TaskMode.HI) == Fraction(7, 20)
    full = Task(id="x", T=4, C_lo=4, C_hi=4, chi=Criticality.HC, rho=1)
    assert utilization(full) == 1
    lc = Task(id="y", T=20, C_lo=5, C_hi=5, chi=Criticality.LC, rho=2)
    assert utilization(lc, shrink=10) == Fraction(1, 2)


def test_utilization_infeasible_shrink():
    lc = Task(id="y", T=20, C_lo=5, C_hi=5, chi=Criticality.LC, rho=2)
    assert utilization(lc, shrink=14) == Fraction(5, 6)
    # a period shrunk down to the budget leaves no room
    for shrink in (15, 16, -1):
        with pytest.raises(InfeasibleShrinkError, match="infeasible shrink"):
            utilization(lc, shrink=shrink)


def test_utilization_monotone(table2):
    for task in table2.hc_tasks:
        assert utilization(task, TaskMode.HI) >= utilization(task, TaskMode.LO)
        values = [utilization(task, shrink=s) for s in range(0, task.T - task.C_lo, 7)]
        assert values == sorted(values)


@pytest.mark.parametrize("name", ["table1", "table2", "fig5"])
def test_dump_round_trip(name, request):
    taskset = request.getfixturevalue(name)
    assert load_taskset(dump_taskset(taskset)) == taskset


def test_hyperperiod(table1, fig5):
    assert hyperperiod(table1) == 20
    assert hyperperiod(fig5) == 6660


def test_resolve_fixture(fixtures_dir, tmp_path):
    assert resolve_fixture("table1") == fixtures_dir / "table1.json"
    own = tmp_path / "mine.json"
    own.write_text("{}")
    assert resolve_fixture(own) == own
    with pytest.raises(TasksetParseError):
        resolve_fixture("no-such-fixture")
