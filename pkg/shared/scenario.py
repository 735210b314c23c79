"""
Execution-budget scenarios.

A scenario decides how long each job actually runs. ``scripted`` lists
budgets per (task, job index), job indices counting from 0 at the first
release; ``stochastic`` lets every HC job overrun C^l with probability p, the
overrun budget drawn uniformly from (C^l, C^h] in ticks. LC jobs always run
exactly C^l.
"""
import json
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator

from config.logging_config import get_logger
from shared.errors import BudgetOutOfRangeError, MissingScriptedBudgetError, ScenarioError
from shared.mc_model import Task, TaskSet, as_fraction

logger = get_logger(__name__)


class BudgetDefault(str, Enum):
    WCET_LO = "wcet_lo"
    WCET_HI = "wcet_hi"


class ScriptedScenario(BaseModel):
    """Budgets in model units keyed by task id then job index."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: Literal["scripted"] = "scripted"
    budgets: Dict[str, Dict[int, Fraction]] = Field(default_factory=dict)
    default: Optional[BudgetDefault] = None

    @field_validator("budgets", mode="before")
    @classmethod
    def _exact_budgets(cls, value):
        if not isinstance(value, dict):
            return value
        return {
            task_id: {index: as_fraction(budget) for index, budget in (jobs or {}).items()}
            for task_id, jobs in value.items()
        }


class StochasticScenario(BaseModel):
    kind: Literal["stochastic"] = "stochastic"
    seed: int = 0
    overrun_probability: float = Field(0.1, ge=0.0, le=1.0)
    per_task: Dict[str, float] = Field(default_factory=dict)

    @field_validator("overrun_probability", mode="before")
    @classmethod
    def _plain_float(cls, value):
        return float(value) if isinstance(value, Fraction) else value

    @field_validator("per_task", mode="before")
    @classmethod
    def _plain_floats(cls, value):
        if isinstance(value, dict):
            return {key: float(p) if isinstance(p, Fraction) else p for key, p in value.items()}
        return value


Scenario = Annotated[Union[ScriptedScenario, StochasticScenario], Field(discriminator="kind")]
_scenario_adapter = TypeAdapter(Scenario)


def all_lo() -> ScriptedScenario:
    return ScriptedScenario(default=BudgetDefault.WCET_LO)


def all_hi() -> ScriptedScenario:
    return ScriptedScenario(default=BudgetDefault.WCET_HI)


class BudgetSampler:
    """Scenario bound to a taskset; answers budget(task, index) in ticks."""

    def __init__(self, scenario: Union[ScriptedScenario, StochasticScenario], taskset: TaskSet):
        self.scenario = scenario
        self.taskset = taskset
        self._drawn: Dict[str, List[int]] = {}
        self._rngs: Dict[str, np.random.Generator] = {}
        if isinstance(scenario, StochasticScenario):
            for position, task in enumerate(taskset.tasks):
                self._rngs[task.id] = np.random.default_rng([scenario.seed, position])
        else:
            unknown = set(scenario.budgets) - {task.id for task in taskset.tasks}
            if unknown:
                raise ScenarioError(f"scenario names unknown tasks: {', '.join(sorted(unknown))}")

    def budget(self, task: Task, index: int) -> int:
        if isinstance(self.scenario, StochasticScenario):
            return self._stochastic(task, index)
        return self._scripted(task, index)

    def _scripted(self, task: Task, index: int) -> int:
        units = self.scenario.budgets.get(task.id, {}).get(index)
        if units is None:
            if self.scenario.default is BudgetDefault.WCET_HI:
                return task.C_hi
            if self.scenario.default is BudgetDefault.WCET_LO:
                return task.C_lo
            raise MissingScriptedBudgetError(task.id, index)
        ticks = self.taskset.to_ticks(units)
        low, high = (task.C_lo, task.C_hi) if task.is_hc else (task.C_lo, task.C_lo)
        if not low <= ticks <= high:
            raise BudgetOutOfRangeError(
                f"budget {units} for task {task.id} job {index} outside [{low}, {high}] ticks"
            )
        return ticks

    def _stochastic(self, task: Task, index: int) -> int:
        drawn = self._drawn.setdefault(task.id, [])
        rng = self._rngs[task.id]
        p = self.scenario.per_task.get(task.id, self.scenario.overrun_probability)
        while len(drawn) <= index:
            # one roll and one budget draw per job, overrun or not
            roll = rng.random()
            pick = int(rng.integers(task.C_lo + 1, task.C_hi + 1)) if task.C_hi > task.C_lo else task.C_lo
            overrun = task.is_hc and task.C_hi > task.C_lo and roll < p
            drawn.append(pick if overrun else task.C_lo)
        return drawn[index]


def load_scenario(source: str) -> Union[ScriptedScenario, StochasticScenario]:
    try:
        raw = json.loads(source, parse_float=Fraction)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    try:
        return _scenario_adapter.validate_python(raw)
    except ValidationError as exc:
        raise ScenarioError(f"malformed scenario: {exc.errors()[0]['msg']}") from exc


def load_scenario_file(path: Union[str, Path]) -> Union[ScriptedScenario, StochasticScenario]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc.strerror}") from exc
    scenario = load_scenario(text)
    logger.debug("Scenario loaded", path=str(path), kind=scenario.kind)
    return scenario
