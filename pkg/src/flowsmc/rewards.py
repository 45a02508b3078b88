"""Terminal rewards, energies, and evaluate-once caching.

Rewards live in [0, 1]; the posterior tilt is exp(R). Weights travel through
the engine in log space (log-energy = R itself), which keeps later numerics
uniform should the reward range ever widen.
"""

from __future__ import annotations

import json
import math
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .errors import ExecutionFailedError
from .workflows import Workflow, WorkflowId

import logging

logger = logging.getLogger(__name__)


def energy(reward: float) -> float:
    """exp(R); maps [0, 1] onto [1, e]."""
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward {reward} outside [0, 1]")
    return math.exp(reward)


class RewardModel(ABC):
    """Terminal scorer for complete workflows."""

    @abstractmethod
    def score(self, workflow: Workflow) -> float:
        """Reward in [0, 1]; requires a complete workflow."""

    @property
    def cost_of_last_call(self) -> float:
        return 0.0


class TabularReward(RewardModel):
    """Lookup table keyed by the workflow trajectory; oracle instrumentation."""

    def __init__(self, table: dict[tuple[str, ...], float], default: float = 0.0):
        for traj, value in table.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"reward {value} for {traj} outside [0, 1]")
        if not 0.0 <= default <= 1.0:
            raise ValueError("default reward outside [0, 1]")
        self.table = {tuple(k): float(v) for k, v in table.items()}
        self.default = float(default)

    def score(self, workflow: Workflow) -> float:
        if not workflow.is_complete:
            raise ValueError("can only score complete workflows")
        return self.table.get(workflow.trajectory, self.default)


class CallableReward(RewardModel):
    """Adapter around a plain function; handy in tests and demos."""

    def __init__(self, fn: Callable[[Workflow], float]):
        self._fn = fn

    def score(self, workflow: Workflow) -> float:
        if not workflow.is_complete:
            raise ValueError("can only score complete workflows")
        return float(self._fn(workflow))


class ValidationAccuracyReward(RewardModel):
    """Mean per-example scorer output over a validation split.

    ``answer_fn(workflow, example) -> str`` produces the workflow's answer for
    one example (in production this runs the workflow in a sandbox; tests stub
    it). A failed execution scores the whole workflow 0.0 rather than aborting
    the run — the pool must keep advancing.
    """

    def __init__(self, examples: Iterable, scorer, answer_fn):
        # sorted-by-id reduction: aggregates stay identical whatever the
        # evaluation order upstream was
        self.examples = sorted(examples, key=lambda e: e.id)
        if not self.examples:
            raise ValueError("validation split is empty")
        self.scorer = scorer
        self.answer_fn = answer_fn
        self._last_cost = 0.0

    def score(self, workflow: Workflow) -> float:
        if not workflow.is_complete:
            raise ValueError("can only score complete workflows")
        values = []
        try:
            for example in self.examples:
                answer = self.answer_fn(workflow, example)
                values.append(float(self.scorer.score(answer, example.answer)))
        except ExecutionFailedError as exc:
            logger.warning("workflow %s failed to execute: %s", workflow.id, exc)
            return 0.0
        # compensated summation keeps the mean exact to ~1e-12 at 1e6 examples
        return math.fsum(values) / len(values)


@dataclass(frozen=True, slots=True)
class CacheRecord:
    reward: float
    cost: float
    timestamp: float


class RewardCache(RewardModel):
    """Evaluate-once wrapper: one underlying evaluation per workflow id.

    Concurrent scoring of distinct ids proceeds in parallel; duplicate
    concurrent requests for one id coalesce onto a single in-flight
    evaluation. Optionally persists an append-only ``rewards.jsonl`` so a
    later run can warm-start from the same file.
    """

    def __init__(self, model: RewardModel, path: str | Path | None = None):
        self.model = model
        self.path = Path(path) if path is not None else None
        self.records: dict[str, CacheRecord] = {}  # keyed by content digest
        self._by_traj: dict[tuple[str, ...], float] = {}  # hot-path view
        self.round = 0  # engine updates this as rounds advance
        self._lock = threading.Lock()
        self._inflight: dict[str, threading.Event] = {}
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self.records[rec["id"]] = CacheRecord(
                    rec["reward"], rec.get("cost", 0.0), 0.0
                )

    @property
    def evaluations(self) -> int:
        return len(self.records)

    def score(self, workflow: Workflow) -> float:
        # trajectory determines the content digest bijectively, so the cheap
        # trajectory map can front the digest-keyed record store
        traj = workflow.trajectory
        hit = self._by_traj.get(traj)
        if hit is not None:
            return hit
        key = workflow.id.digest
        while True:
            with self._lock:
                record = self.records.get(key)
                if record is not None:
                    self._by_traj[traj] = record.reward
                    return record.reward
                waiter = self._inflight.get(key)
                if waiter is None:
                    self._inflight[key] = threading.Event()
                    break
            waiter.wait()
        try:
            reward = self.model.score(workflow)
            cost = self.model.cost_of_last_call
            record = CacheRecord(reward, cost, time.time())
            with self._lock:
                self.records[key] = record
                self._by_traj[traj] = reward
            self._persist(key, record)
            return reward
        finally:
            with self._lock:
                event = self._inflight.pop(key)
            event.set()

    def _persist(self, key: str, record: CacheRecord) -> None:
        if self.path is None:
            return
        line = json.dumps(
            {"id": key, "reward": record.reward, "cost": record.cost, "round": self.round}
        )
        with self._lock:
            with self.path.open("a") as fh:
                fh.write(line + "\n")


def scored(model: RewardModel, workflow: Workflow) -> tuple[float, float]:
    """(reward, energy) of a complete workflow."""
    r = model.score(workflow)
    return r, energy(r)
