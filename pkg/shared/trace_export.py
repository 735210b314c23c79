"""
Trace events and their text encodings.

CSV columns are ``t,kind,task,detail`` where ``detail`` is the event payload as
compact, key-sorted JSON. JSONL carries one event object per line. Both parse
back to the same TraceEvent list.
"""
import csv
import io
import json
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from config.logging_config import get_logger

logger = get_logger(__name__)

CSV_COLUMNS = ("t", "kind", "task", "detail")
GANTT_COLUMNS = ("task", "job", "start", "end", "mode", "pattern", "omega")


class EventKind(str, Enum):
    RELEASE = "Release"
    DISPATCH = "Dispatch"
    PREEMPT = "Preempt"
    COMPLETE = "Complete"
    DEADLINE_MISS = "DeadlineMiss"
    DISCARD = "Discard"
    TASK_MODE_SWITCH = "TaskModeSwitch"
    SYSTEM_MODE_SWITCH = "SystemModeSwitch"
    STRETCH_APPLIED = "StretchApplied"
    SHRINK_APPLIED = "ShrinkApplied"
    REFRESH = "Refresh"
    NESTED_PRESSURE = "NestedPressure"
    IDLE = "Idle"


class TraceEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: int
    kind: EventKind
    task: Optional[str] = None
    detail: Dict[str, Any] = Field(default_factory=dict)


class TraceFormat(str, Enum):
    CSV = "csv"
    JSONL = "jsonl"
    GANTT = "gantt-rows"


class GanttRow(BaseModel):
    task: str
    job: int
    start: int
    end: int
    mode: str
    pattern: str
    omega: str


def _detail_json(detail: Dict[str, Any]) -> str:
    return json.dumps(detail, sort_keys=True, separators=(",", ":"))


def gantt_rows(trace: Iterable[TraceEvent], horizon: Optional[int] = None) -> List[GanttRow]:
    """Execution segments rebuilt from Dispatch and the event that ends each one."""
    rows: List[GanttRow] = []
    open_segment: Optional[TraceEvent] = None
    last_t = 0

    def close(end: int) -> None:
        nonlocal open_segment
        if open_segment is not None and end > open_segment.t:
            d = open_segment.detail
            rows.append(
                GanttRow(
                    task=open_segment.task,
                    job=d.get("job", 0),
                    start=open_segment.t,
                    end=end,
                    mode=d.get("mode", ""),
                    pattern=d.get("pattern", ""),
                    omega=d.get("omega", ""),
                )
            )
        open_segment = None

    for event in trace:
        last_t = event.t
        if event.kind is EventKind.DISPATCH:
            close(event.t)
            open_segment = event
        elif event.kind in (EventKind.PREEMPT, EventKind.COMPLETE, EventKind.DEADLINE_MISS, EventKind.DISCARD):
            if open_segment is not None and open_segment.task == event.task:
                if event.kind is not EventKind.DISCARD or event.detail.get("dropped"):
                    close(event.t)
        elif event.kind is EventKind.IDLE:
            close(event.t)
        elif event.kind is EventKind.TASK_MODE_SWITCH and open_segment is not None and open_segment.task == event.task:
            # split the segment so the HI part carries its own omega
            current = open_segment
            close(event.t)
            open_segment = TraceEvent(
                t=event.t,
                kind=EventKind.DISPATCH,
                task=current.task,
                detail={**current.detail, "omega": "HI"},
            )
        elif event.kind is EventKind.SYSTEM_MODE_SWITCH and open_segment is not None:
            current = open_segment
            close(event.t)
            open_segment = TraceEvent(
                t=event.t,
                kind=EventKind.DISPATCH,
                task=current.task,
                detail={**current.detail, "mode": event.detail.get("to", ""), "pattern": event.detail.get("pattern", "")},
            )
    close(horizon if horizon is not None else last_t)
    return rows


def export_trace(trace: Iterable[TraceEvent], fmt: TraceFormat = TraceFormat.CSV, horizon: Optional[int] = None) -> str:
    fmt = TraceFormat(fmt)
    trace = list(trace)
    buffer = io.StringIO()
    if fmt is TraceFormat.JSONL:
        for event in trace:
            buffer.write(event.model_dump_json() + "\n")
        return buffer.getvalue()

    writer = csv.writer(buffer, lineterminator="\n")
    if fmt is TraceFormat.CSV:
        writer.writerow(CSV_COLUMNS)
        for event in trace:
            writer.writerow([event.t, event.kind.value, event.task or "", _detail_json(event.detail)])
    else:
        writer.writerow(GANTT_COLUMNS)
        for row in gantt_rows(trace, horizon):
            writer.writerow([row.task, row.job, row.start, row.end, row.mode, row.pattern, row.omega])
    return buffer.getvalue()


def parse_trace(text: str, fmt: TraceFormat = TraceFormat.CSV) -> List[TraceEvent]:
    """Inverse of export_trace for the csv and jsonl formats."""
    fmt = TraceFormat(fmt)
    if fmt is TraceFormat.JSONL:
        return [TraceEvent.model_validate_json(line) for line in text.splitlines() if line.strip()]
    if fmt is TraceFormat.GANTT:
        raise ValueError("gantt-rows output is a projection and cannot be parsed back into events")
    events = []
    for record in csv.DictReader(io.StringIO(text)):
        events.append(
            TraceEvent(
                t=int(record["t"]),
                kind=EventKind(record["kind"]),
                task=record["task"] or None,
                detail=json.loads(record["detail"]) if record["detail"] else {},
            )
        )
    logger.debug("Trace parsed", events=len(events), format=fmt.value)
    return events
