"""
mcsim command line.

    python -m mcsim_cli simulate  --taskset table1 --algo multimode --script fig4
    python -m mcsim_cli analyze   --taskset table2 --theorem T1
    python -m mcsim_cli casestudy --taskset table2 --p 0.05 0.1 --seeds 20
    python -m mcsim_cli export    --in trace.jsonl --from jsonl --format gantt-rows

Every subcommand accepts ``--config FILE.json`` whose keys mirror the flag
names; flags given on the command line win over the file.

Exit codes: 0 ok, 2 input error, 3 HC deadline miss, 4 invariant violation.
"""
import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional

from config.logging_config import configure_logging, get_logger
from config.settings import settings
from shared.case_study import run_case_study
from shared.errors import (
    InfeasibleShrinkError,
    ModeControllerError,
    ScenarioError,
    TasksetError,
    TheoremInapplicableError,
)
from shared.mc_model import TaskMode, TaskSet, as_fraction, load_taskset_file, resolve_fixture
from shared.scenario import StochasticScenario, load_scenario_file
from shared.sim_engine import Algorithm, SimulationOptions, check_trace_invariants, simulate
from shared.trace_export import TraceFormat, export_trace, parse_trace
from shared.workload import Anchoring, Snapshot, Theorem, load_snapshot, schedulable

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_HC_MISS = 3
EXIT_INVARIANT = 4


class InputError(Exception):
    """Bad flag combination detected by the CLI itself."""


def _write(text: str, path: Optional[str]) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _horizon_ticks(taskset: TaskSet, units) -> int:
    try:
        ticks = taskset.to_ticks(as_fraction(str(units)))
    except ValueError as exc:
        raise InputError(f"bad horizon: {units}") from exc
    if ticks <= 0:
        raise InputError(f"horizon must be positive, got {units}")
    return ticks


def _taskset(args) -> TaskSet:
    if not args.taskset:
        raise InputError("--taskset is required")
    return load_taskset_file(resolve_fixture(args.taskset))


def _parse_theorem(name: str) -> Theorem:
    for theorem in Theorem:
        if name == theorem.value or name.upper() == theorem.value.split("_")[0]:
            return theorem
    raise InputError(f"unknown theorem: {name}")


# --- subcommands ---

def cmd_simulate(args) -> int:
    taskset = _taskset(args)
    if args.script and args.p is not None:
        raise InputError("give either --script or --p, not both")
    if args.script:
        scenario = load_scenario_file(resolve_fixture(args.script))
    else:
        p = args.p if args.p is not None else settings.overrun_probability
        scenario = StochasticScenario(seed=args.seed, overrun_probability=p)
    algorithm = Algorithm.parse(args.algo)
    horizon = _horizon_ticks(taskset, args.horizon)
    options = SimulationOptions(
        anchoring=Anchoring(args.anchoring),
        one_go_shrink=args.shrink_policy == "one_go",
        record_trace=True,
    )
    trace, metrics = simulate(taskset, scenario, algorithm, horizon, options)

    if args.out:
        _write(export_trace(trace, TraceFormat(args.format), horizon=horizon), args.out)
    _write(json.dumps(metrics.summary(), indent=2) + "\n", args.metrics_out)

    violations = check_trace_invariants(trace, taskset)
    if violations:
        for violation in violations:
            logger.error("Trace invariant violated", detail=violation)
        return EXIT_INVARIANT
    if metrics.hc_deadline_misses:
        logger.warning("HC deadline miss detected", tasks=metrics.hc_missing_tasks)
        return EXIT_HC_MISS
    return EXIT_OK


def cmd_analyze(args) -> int:
    taskset = _taskset(args)
    theorem = _parse_theorem(args.theorem)
    if args.snapshot:
        raw = json.loads(resolve_fixture(args.snapshot).read_text(encoding="utf-8"), parse_float=Fraction)
        snapshot = load_snapshot(raw.get("snapshot", raw) if isinstance(raw, dict) else raw, taskset)
    else:
        omega = TaskMode.HI if args.all_hi else TaskMode.LO
        snapshot = Snapshot.synchronous(taskset, omega=omega)
    t = taskset.to_ticks(as_fraction(str(args.t))) if args.t is not None else None
    result = schedulable(theorem, taskset, snapshot, t, Anchoring(args.anchoring))

    verdict = "schedulable" if result.schedulable else "unschedulable"
    print(f"{result.theorem.value} pivot={result.pivot} {verdict} witness_z={result.witness_z} demand={result.demand}")
    lines = ["pivot,t,z,demand,supply,schedulable"]
    lines.extend(
        f"{row.pivot},{row.t},{row.z},{row.demand},{row.supply},{str(row.schedulable).lower()}"
        for row in result.rows
    )
    _write("\n".join(lines) + "\n", args.csv)
    return EXIT_OK


def cmd_casestudy(args) -> int:
    taskset = _taskset(args)
    horizon = _horizon_ticks(taskset, args.horizon)
    report = run_case_study(
        taskset,
        overrun_p=args.p,
        seeds=list(range(args.seeds)),
        horizon=horizon,
        max_workers=args.workers,
    )
    text = report.to_csv() if args.format == "csv" else report.to_markdown()
    _write(text, args.out)
    for violation in report.dominance_violations:
        logger.warning("Dominance property violated", detail=violation)
    return EXIT_OK


def cmd_export(args) -> int:
    if not args.input:
        raise InputError("--in is required")
    try:
        text = Path(args.input).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read trace {args.input}: {exc.strerror}") from exc
    trace = parse_trace(text, TraceFormat(args.source_format))
    _write(export_trace(trace, TraceFormat(args.format), horizon=args.horizon), args.out)
    return EXIT_OK


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcsim", description="Elastic multimode mixed-criticality simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    formats = [fmt.value for fmt in TraceFormat]

    p = sub.add_parser("simulate", help="run one simulation")
    p.add_argument("--taskset", help="taskset file or fixture name")
    p.add_argument("--algo", default="multimode", help="fp | task | drop | multimode")
    p.add_argument("--script", help="scripted scenario file or fixture name")
    p.add_argument("--p", type=float, default=None, help="per-job overrun probability (stochastic scenario)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", default=settings.default_horizon_units, help="horizon in model time units")
    p.add_argument("--format", choices=formats, default="csv")
    p.add_argument("--out", help="trace output path ('-' for stdout)")
    p.add_argument("--metrics-out", dest="metrics_out", help="metrics JSON path (default stdout)")
    p.add_argument("--anchoring", choices=[a.value for a in Anchoring], default=settings.demand_anchoring)
    p.add_argument("--shrink-policy", dest="shrink_policy", choices=["per_window", "one_go"], default=settings.shrink_policy)
    p.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="run a schedulability theorem on a snapshot")
    a.add_argument("--taskset", help="taskset file or fixture name")
    a.add_argument("--theorem", default="T1", help="T1 | T2 | T3 | T4")
    a.add_argument("--snapshot", help="snapshot file (or a taskset file with a 'snapshot' key)")
    a.add_argument("--all-hi", dest="all_hi", action="store_true", help="synchronous snapshot with every HC task in HI")
    a.add_argument("--t", default=None, help="analysis instant in model time units")
    a.add_argument("--anchoring", choices=[a_.value for a_ in Anchoring], default=settings.demand_anchoring)
    a.add_argument("--csv", help="demand curve CSV path (default stdout)")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("casestudy", help="four-algorithm comparison")
    c.add_argument("--taskset", default="table2")
    c.add_argument("--p", type=float, nargs="+", default=list(settings.casestudy_p_values))
    c.add_argument("--seeds", type=int, default=settings.casestudy_seeds)
    c.add_argument("--horizon", default=settings.casestudy_horizon_units, help="horizon in model time units")
    c.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    c.add_argument("--out")
    c.add_argument("--workers", type=int, default=settings.max_workers)
    c.set_defaults(func=cmd_casestudy)

    e = sub.add_parser("export", help="convert a recorded trace")
    e.add_argument("--in", dest="input")
    e.add_argument("--from", dest="source_format", choices=["csv", "jsonl"], default="jsonl")
    e.add_argument("--format", choices=formats, default="csv")
    e.add_argument("--horizon", type=int, default=None, help="closes the last gantt segment (ticks)")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export)

    for subparser in (p, a, c, e):
        subparser.add_argument("--config", help="JSON file whose keys mirror the flags")
    parser._mcsim_subparsers = {"simulate": p, "analyze": a, "casestudy": c, "export": e}
    return parser


def _config_overrides(argv: List[str]) -> Dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        overrides = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load config {known.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise InputError("config file must hold a JSON object")
    return {key.replace("-", "_"): value for key, value in overrides.items()}


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging(settings.log_level)
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        overrides = _config_overrides(argv)
        if overrides:
            for subparser in parser._mcsim_subparsers.values():
                subparser.set_defaults(**overrides)
        args = parser.parse_args(argv)
        return args.func(args)
    except (InputError, TasksetError, ScenarioError, TheoremInapplicableError, InfeasibleShrinkError, ValueError) as exc:
        logger.error("Input rejected", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModeControllerError as exc:
        logger.error("Mode controller invariant violated", error=str(exc))
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
