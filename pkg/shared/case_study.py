"""
Case-study harness: the four-algorithm comparison over seeded stochastic
scenarios, plus the randomized sweeps behind the invariant and soundness
checks. Runs share nothing mutable and fan out over a process pool.
"""
import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from config.logging_config import get_logger
from config.settings import settings
from shared.errors import TheoremInapplicableError
from shared.mc_model import Criticality, Task, TaskMode, TaskSet, dump_taskset
from shared.scenario import StochasticScenario
from shared.sim_engine import Algorithm, SimulationOptions, check_trace_invariants, simulate
from shared.trace_export import EventKind
from shared.workload import DemandKind, Snapshot, Theorem, busy_window, schedulable

logger = get_logger(__name__)

ALGORITHMS = (
    Algorithm.FP_CLASSIC,
    Algorithm.TASK_LEVEL_ONLY,
    Algorithm.SYSTEM_LEVEL_DROP,
    Algorithm.MULTIMODE,
)

ROW_COLUMNS = (
    "p", "seed", "algorithm", "hc_misses", "hc_missing_tasks", "lc_released", "lc_discarded",
    "discard_rate", "system_switches", "task_mode_switches", "dem_evaluations", "filter_set_size",
)


class CaseStudyRow(BaseModel):
    p: float
    seed: int
    algorithm: Algorithm
    hc_misses: int
    hc_missing_tasks: List[str]
    lc_released: int
    lc_discarded: int
    discard_rate: float
    system_switches: int
    task_mode_switches: int
    dem_evaluations: int
    filter_set_size: int


class AlgorithmSummary(BaseModel):
    algorithm: Algorithm
    runs: int
    hc_misses: int
    hc_missing_tasks: List[str]
    discard_rate_min: float
    discard_rate_max: float
    system_switches: int
    dem_evaluations: int


class CaseStudyReport(BaseModel):
    rows: List[CaseStudyRow] = Field(default_factory=list)
    summaries: List[AlgorithmSummary] = Field(default_factory=list)
    dominance_violations: List[str] = Field(default_factory=list)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(ROW_COLUMNS)
        for row in self.rows:
            writer.writerow([
                row.p, row.seed, row.algorithm.value, row.hc_misses, " ".join(row.hc_missing_tasks),
                row.lc_released, row.lc_discarded, f"{row.discard_rate:.6f}", row.system_switches,
                row.task_mode_switches, row.dem_evaluations, row.filter_set_size,
            ])
        return buffer.getvalue()

    def to_markdown(self) -> str:
        lines = [
            "| algorithm | runs | HC misses | HC tasks missing | LC discard rate | system switches | DEM evaluations |",
            "|---|---|---|---|---|---|---|",
        ]
        for s in self.summaries:
            lines.append(
                f"| {s.algorithm.value} | {s.runs} | {s.hc_misses} | {', '.join(s.hc_missing_tasks) or '-'} "
                f"| {s.discard_rate_min:.2%} - {s.discard_rate_max:.2%} | {s.system_switches} | {s.dem_evaluations} |"
            )
        if self.dominance_violations:
            lines.append("")
            lines.append("Dominance violations:")
            lines.extend(f"- {violation}" for violation in self.dominance_violations)
        return "\n".join(lines) + "\n"


def _fan_out(fn: Callable, jobs: Sequence, max_workers: Optional[int]) -> List:
    if max_workers == 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, jobs))


def _case_study_run(job: Tuple[TaskSet, float, int, Algorithm, int]) -> CaseStudyRow:
    taskset, p, seed, algorithm, horizon = job
    scenario = StochasticScenario(seed=seed, overrun_probability=p)
    _, metrics = simulate(taskset, scenario, algorithm, horizon, SimulationOptions(record_trace=False))
    return CaseStudyRow(
        p=p,
        seed=seed,
        algorithm=algorithm,
        hc_misses=metrics.hc_deadline_misses,
        hc_missing_tasks=metrics.hc_missing_tasks,
        lc_released=metrics.lc_released,
        lc_discarded=metrics.lc_discarded,
        discard_rate=metrics.discard_rate,
        system_switches=metrics.system_switches,
        task_mode_switches=metrics.task_mode_switches,
        dem_evaluations=metrics.dem_evaluations,
        filter_set_size=metrics.filter_set_size,
    )


def dominance_violations(rows: Iterable[CaseStudyRow]) -> List[str]:
    """Per scenario: Multimode discards no more than SystemLevelDrop and misses no more HC deadlines than TaskLevelOnly."""
    by_scenario: Dict[Tuple[float, int], Dict[Algorithm, CaseStudyRow]] = {}
    for row in rows:
        by_scenario.setdefault((row.p, row.seed), {})[row.algorithm] = row
    violations = []
    for (p, seed), runs in sorted(by_scenario.items()):
        multi = runs.get(Algorithm.MULTIMODE)
        if multi is None:
            continue
        drop = runs.get(Algorithm.SYSTEM_LEVEL_DROP)
        if drop is not None and multi.discard_rate > drop.discard_rate:
            violations.append(
                f"p={p} seed={seed}: Multimode discard {multi.discard_rate:.4f} > SystemLevelDrop {drop.discard_rate:.4f}"
            )
        task_level = runs.get(Algorithm.TASK_LEVEL_ONLY)
        if task_level is not None and multi.hc_misses > task_level.hc_misses:
            violations.append(
                f"p={p} seed={seed}: Multimode HC misses {multi.hc_misses} > TaskLevelOnly {task_level.hc_misses}"
            )
    return violations


def _summaries(rows: List[CaseStudyRow]) -> List[AlgorithmSummary]:
    summaries = []
    for algorithm in ALGORITHMS:
        mine = [row for row in rows if row.algorithm is algorithm]
        if not mine:
            continue
        rates = [row.discard_rate for row in mine]
        summaries.append(
            AlgorithmSummary(
                algorithm=algorithm,
                runs=len(mine),
                hc_misses=sum(row.hc_misses for row in mine),
                hc_missing_tasks=sorted({task for row in mine for task in row.hc_missing_tasks}),
                discard_rate_min=min(rates),
                discard_rate_max=max(rates),
                system_switches=sum(row.system_switches for row in mine),
                dem_evaluations=sum(row.dem_evaluations for row in mine),
            )
        )
    return summaries


def run_case_study(
    taskset: TaskSet,
    overrun_p: Sequence[float],
    seeds: Sequence[int],
    horizon: int,
    algorithms: Sequence[Algorithm] = ALGORITHMS,
    max_workers: Optional[int] = settings.max_workers,
) -> CaseStudyReport:
    """Every (p, seed, algorithm) combination on one taskset, aggregated."""
    jobs = [(taskset, float(p), int(seed), algorithm, horizon) for p in overrun_p for seed in seeds for algorithm in algorithms]
    logger.info("Case study started", runs=len(jobs), horizon=horizon, taskset=taskset.name)
    rows = _fan_out(_case_study_run, jobs, max_workers)
    report = CaseStudyReport(rows=rows, summaries=_summaries(rows), dominance_violations=dominance_violations(rows))
    logger.info("Case study finished", runs=len(rows), dominance_violations=len(report.dominance_violations))
    return report


# --- random tasksets ---

def uunifast(rng: np.random.Generator, n: int, total: float) -> np.ndarray:
    """n utilizations summing to ``total``, uniformly distributed over the simplex."""
    utils = np.empty(n)
    remaining = total
    for i in range(n - 1):
        next_remaining = remaining * rng.random() ** (1.0 / (n - i))
        utils[i] = remaining - next_remaining
        remaining = next_remaining
    utils[n - 1] = remaining
    return utils


def random_taskset(
    rng: np.random.Generator,
    n: int = 4,
    utilization: float = 0.6,
    period_range: Tuple[int, int] = (5, 30),
    hc_fraction: float = 0.5,
    overrun_factor: Tuple[float, float] = (1.2, 2.0),
    name: Optional[str] = None,
) -> TaskSet:
    """
    Rate-monotonic dual-criticality taskset with integer times: UUniFast
    utilizations, uniform periods, C^l = max(1, round(U*T)) and, for HC tasks,
    C^h = C^l scaled by a factor drawn from ``overrun_factor`` and capped at T.
    At least one task is HC.
    """
    low, high = period_range
    utils = uunifast(rng, n, utilization)
    periods = rng.integers(low, high + 1, size=n)
    hc_flags = rng.random(n) < hc_fraction
    if not hc_flags.any():
        hc_flags[int(rng.integers(0, n))] = True
    factors = rng.uniform(overrun_factor[0], overrun_factor[1], size=n)

    order = sorted(range(n), key=lambda i: (int(periods[i]), i))
    tasks = []
    for rho, i in enumerate(order, start=1):
        T = int(periods[i])
        C_lo = min(T, max(1, int(round(utils[i] * T))))
        hc = bool(hc_flags[i])
        C_hi = min(T, max(C_lo, int(round(C_lo * factors[i])))) if hc else C_lo
        tasks.append(
            Task(
                id=f"t{i + 1}",
                T=T,
                C_lo=C_lo,
                C_hi=C_hi,
                chi=Criticality.HC if hc else Criticality.LC,
                rho=rho,
            )
        )
    return TaskSet(tasks=tuple(tasks), time_scale=1, name=name)


# --- randomized sweeps ---

class SweepFinding(BaseModel):
    run: int
    taskset: str
    scenario: dict
    horizon: int
    problems: List[str]


def sweep_case(seed: int, run: int, n_max: int, p: float) -> Tuple[TaskSet, StochasticScenario]:
    rng = np.random.default_rng([seed, run])
    n = int(rng.integers(2, n_max + 1))
    taskset = random_taskset(rng, n=n, utilization=float(rng.uniform(0.3, 0.9)), name=f"sweep-{seed}-{run}")
    return taskset, StochasticScenario(seed=run, overrun_probability=p)


def _invariant_run(job: Tuple[int, int, int, float, int]) -> Optional[SweepFinding]:
    seed, run, n_max, p, periods = job
    taskset, scenario = sweep_case(seed, run, n_max, p)
    horizon = periods * max(task.T for task in taskset.tasks)
    trace, _ = simulate(taskset, scenario, Algorithm.MULTIMODE, horizon, SimulationOptions(record_trace=True))
    problems = check_trace_invariants(trace, taskset)
    if not problems:
        return None
    return SweepFinding(
        run=run, taskset=dump_taskset(taskset), scenario=scenario.model_dump(), horizon=horizon, problems=problems,
    )


def run_invariant_sweep(
    runs: int,
    seed: int = 0,
    n_max: int = 4,
    p: float = 0.3,
    periods: int = 6,
    max_workers: Optional[int] = settings.max_workers,
) -> List[SweepFinding]:
    """Multimode over random small tasksets; returns every run whose trace breaks an invariant."""
    jobs = [(seed, run, n_max, p, periods) for run in range(runs)]
    findings = [finding for finding in _fan_out(_invariant_run, jobs, max_workers) if finding is not None]
    logger.info("Invariant sweep finished", runs=runs, findings=len(findings))
    return findings


def soundness_certified(taskset: TaskSet) -> bool:
    """
    Offline gate for the soundness sweep: the synchronous all-LO start passes
    the Normal test for every HC task, and every HC task still closes when it
    overruns to C^h against every other HC task at C^h and the
    higher-priority LC tasks at C^l.
    """
    lo = Snapshot.synchronous(taskset)
    hi = Snapshot.synchronous(taskset, omega=TaskMode.HI)
    try:
        if not all(
            schedulable(Theorem.T1_NORMAL, taskset, lo, pivot=task.id).schedulable
            for task in taskset.hc_tasks
        ):
            return False
        if not schedulable(Theorem.T2_ALL_HI, taskset, hi).schedulable:
            return False
    except TheoremInapplicableError:
        return False
    return all(
        busy_window(DemandKind.OVERRUN, hi.jobs[task.id], hi, 0)[0] is not None
        for task in taskset.hc_tasks
    )


def _soundness_run(job: Tuple[int, int, int, float, int]) -> Optional[SweepFinding]:
    seed, run, n_max, p, periods = job
    taskset, scenario = sweep_case(seed, run, n_max, p)
    if not soundness_certified(taskset):
        return None
    horizon = periods * max(task.T for task in taskset.tasks)
    options = SimulationOptions(record_trace=True, check_theorems=True)
    trace, metrics = simulate(taskset, scenario, Algorithm.MULTIMODE, horizon, options)
    if not metrics.theorem1_passed or metrics.hc_deadline_misses == 0:
        return None
    # minimized counterexample: the run cut at the first HC miss
    first_miss = min(
        event.t for event in trace
        if event.kind is EventKind.DEADLINE_MISS and event.detail.get("criticality") == "HC"
    )
    return SweepFinding(
        run=run,
        taskset=dump_taskset(taskset),
        scenario=scenario.model_dump(),
        horizon=first_miss,
        problems=metrics.hc_missing_tasks,
    )


def run_soundness_sweep(
    runs: int,
    seed: int = 0,
    n_max: int = 4,
    p: float = 0.3,
    periods: int = 6,
    archive_dir: Optional[Path] = None,
    max_workers: Optional[int] = settings.max_workers,
) -> List[SweepFinding]:
    """
    Multimode runs on tasksets that pass ``soundness_certified`` whose
    Theorem-1 test held at t=0 and at every switch back, yet still missed a
    HC deadline. Each one is written to ``archive_dir``.
    """
    jobs = [(seed, run, n_max, p, periods) for run in range(runs)]
    certified = sum(soundness_certified(sweep_case(seed, run, n_max, p)[0]) for run in range(runs))
    findings = [finding for finding in _fan_out(_soundness_run, jobs, max_workers) if finding is not None]
    if findings and archive_dir is not None:
        archive_dir = Path(archive_dir)
        archive_dir.mkdir(parents=True, exist_ok=True)
        for finding in findings:
            path = archive_dir / f"counterexample-{seed}-{finding.run}.json"
            path.write_text(
                json.dumps(
                    {
                        "taskset": json.loads(finding.taskset),
                        "scenario": finding.scenario,
                        "horizon": finding.horizon,
                        "hc_missing_tasks": finding.problems,
                    },
                    indent=2,
                ),
                encoding="utf-8",
            )
            logger.warning("Soundness counterexample archived", path=str(path))
    logger.info("Soundness sweep finished", runs=runs, certified=certified, counterexamples=len(findings))
    return findings
