"""
FastAPI backend for mcsim.
Runs simulations and schedulability analyses over HTTP, and streams trace
events over a WebSocket while a simulation runs.
"""
import os
import sys
import hashlib
import json
from collections import OrderedDict
from contextlib import asynccontextmanager
from datetime import datetime
from typing import Any, Dict, List, Optional, Union

# Add project root to path for imports
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, ValidationError

from config.logging_config import configure_logging, get_logger
from config.settings import settings
from shared.errors import HorizonLimitError, McSimError, ModeControllerError
from shared.mc_model import (
    TaskMode,
    TaskSet,
    as_fraction,
    load_taskset,
    load_taskset_file,
    resolve_fixture,
)
from shared.scenario import StochasticScenario, load_scenario
from shared.sim_engine import Algorithm, SimulationOptions, check_trace_invariants, simulate
from shared.workload import Anchoring, Snapshot, Theorem, load_snapshot, schedulable

configure_logging(settings.log_level)
logger = get_logger(__name__)


class SimulateRequest(BaseModel):
    taskset: Union[str, Dict[str, Any]] = Field(description="fixture name or inline taskset document")
    algorithm: str = "multimode"
    scenario: Optional[Dict[str, Any]] = None
    horizon: Optional[Union[int, str]] = Field(default=None, description="model time units")
    anchoring: Anchoring = Anchoring(settings.demand_anchoring)
    include_trace: bool = False


class AnalyzeRequest(BaseModel):
    taskset: Union[str, Dict[str, Any]]
    theorem: Theorem = Theorem.T1_NORMAL
    snapshot: Optional[Dict[str, Any]] = None
    all_hi: bool = False
    anchoring: Anchoring = Anchoring(settings.demand_anchoring)


class ResultCache:
    """Small LRU of simulation responses keyed by the canonical request JSON."""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._entries: "OrderedDict[str, Dict]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(request: BaseModel) -> str:
        payload = json.dumps(request.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def get(self, key: str) -> Optional[Dict]:
        if key in self._entries:
            self._entries.move_to_end(key)
            self.hits += 1
            return self._entries[key]
        self.misses += 1
        return None

    def put(self, key: str, value: Dict) -> None:
        self._entries[key] = value
        self._entries.move_to_end(key)
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def clear(self) -> None:
        self._entries.clear()
        self.hits = self.misses = 0

    def stats(self) -> Dict:
        return {"entries": len(self._entries), "capacity": self.capacity, "hits": self.hits, "misses": self.misses}


cache = ResultCache()


def _resolve_taskset(ref: Union[str, Dict[str, Any]]) -> TaskSet:
    if isinstance(ref, dict):
        return load_taskset(json.dumps(ref))
    return load_taskset_file(resolve_fixture(ref))


def _run(request: SimulateRequest) -> Dict:
    taskset = _resolve_taskset(request.taskset)
    if request.scenario is not None:
        scenario = load_scenario(json.dumps(request.scenario))
    else:
        scenario = StochasticScenario(seed=0, overrun_probability=settings.overrun_probability)
    units = as_fraction(str(request.horizon if request.horizon is not None else settings.default_horizon_units))
    if units > settings.max_horizon_units:
        raise HorizonLimitError(f"horizon {units} exceeds the limit of {settings.max_horizon_units} units")
    horizon = taskset.to_ticks(units)
    options = SimulationOptions(anchoring=request.anchoring, record_trace=True)
    trace, metrics = simulate(taskset, scenario, Algorithm.parse(request.algorithm), horizon, options)
    result = {
        "metrics": metrics.summary(),
        "violations": check_trace_invariants(trace, taskset),
    }
    if request.include_trace:
        result["trace"] = [event.model_dump(mode="json") for event in trace]
    return result


def _analyze(request: AnalyzeRequest) -> Dict:
    taskset = _resolve_taskset(request.taskset)
    if request.snapshot is not None:
        snapshot = load_snapshot(json.dumps(request.snapshot), taskset)
    else:
        omega = TaskMode.HI if request.all_hi else TaskMode.LO
        snapshot = Snapshot.synchronous(taskset, omega=omega)
    result = schedulable(request.theorem, taskset, snapshot, anchoring=request.anchoring)
    return {
        "theorem": result.theorem.value,
        "pivot": result.pivot,
        "schedulable": result.schedulable,
        "witness_z": result.witness_z,
        "demand": result.demand,
        "rows": [row.__dict__ for row in result.rows],
    }


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan context manager."""
    logger.info("Starting mcsim webapp...", fixtures=str(settings.fixtures_dir))
    yield
    logger.info("Shutting down mcsim webapp", cache=cache.stats())


app = FastAPI(
    title="mcsim",
    description="Elastic multimode mixed-criticality scheduling simulator",
    version="1.0.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.middleware("http")
async def catch_exceptions_middleware(request: Request, call_next):
    """
    Middleware to catch unhandled exceptions and return a generic 500 error.
    This prevents exposing sensitive information in stack traces.
    """
    try:
        return await call_next(request)
    except Exception as e:
        logger.error(f"Unhandled exception: {e}", exc_info=True)
        return JSONResponse(
            status_code=500,
            content={"detail": "Internal Server Error"},
        )


@app.post("/api/simulate")
async def simulate_endpoint(request: SimulateRequest):
    """Run one simulation; the trace is only returned when asked for."""
    key = cache.key(request)
    cached = cache.get(key)
    if cached is not None:
        return cached
    try:
        result = await run_in_threadpool(_run, request)
    except ModeControllerError as e:
        logger.error("Mode controller invariant violated", error=str(e))
        raise HTTPException(status_code=500, detail=str(e))
    except (McSimError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    logger.info(
        "Simulation served",
        algorithm=result["metrics"]["algorithm"],
        hc_deadline_misses=result["metrics"]["hc_deadline_misses"],
    )
    cache.put(key, result)
    return result


@app.post("/api/analyze")
async def analyze_endpoint(request: AnalyzeRequest):
    """Schedulability verdict plus the demand curve for one snapshot."""
    try:
        return await run_in_threadpool(_analyze, request)
    except (McSimError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))


@app.websocket("/ws/simulate")
async def simulate_stream(websocket: WebSocket):
    """Receive one SimulateRequest, stream its trace events, then the metrics."""
    await websocket.accept()
    try:
        payload = await websocket.receive_json()
        try:
            request = SimulateRequest.model_validate(payload)
            result = await run_in_threadpool(_run, request.model_copy(update={"include_trace": True}))
        except (McSimError, ValueError, ValidationError) as e:
            await websocket.send_json({"type": "error", "detail": str(e)})
            await websocket.close()
            return
        for event in result["trace"]:
            await websocket.send_json({"type": "event", "event": event})
        await websocket.send_json({"type": "metrics", "metrics": result["metrics"], "violations": result["violations"]})
        await websocket.close()
    except WebSocketDisconnect:
        logger.info("WebSocket client disconnected")


@app.get("/api/health")
async def health_check():
    """Health check endpoint with cache statistics."""
    return {
        "status": "healthy",
        "timestamp": datetime.now().isoformat(),
        "services": {
            "simulator": "online",
            "analyzer": "online",
            "websocket": "online",
            "cache": "online",
        },
        "cache_stats": cache.stats(),
    }


@app.get("/api/fixtures")
async def list_fixtures() -> List[str]:
    """Fixture names usable wherever a taskset or scenario reference is accepted."""
    return sorted(path.stem for path in settings.fixtures_dir.glob("*.json"))


@app.post("/api/cache/clear")
async def clear_cache():
    cache.clear()
    return {
        "status": "Cache cleared successfully",
        "timestamp": datetime.now().isoformat(),
    }


if __name__ == "__main__":
    import uvicorn
    logger.info(f"Starting mcsim webapp on http://{settings.webapp_host}:{settings.webapp_port}")
    uvicorn.run(
        "main:app",
        host=settings.webapp_host,
        port=settings.webapp_port,
        reload=settings.debug,
        log_level=settings.log_level.lower(),
    )
