"""Pool-level refinement operators.

A refiner consumes the round's pool of scored complete workflows and emits M
new complete workflows, one at a time: each proposal is scored by the caller-
injected callback and inserted back into the working pool before the next one
is generated. That generate-and-insert schedule is semantic — proposal m must
be able to select among proposals 1..m-1 — so ``propose`` is never
parallelized.
"""

from __future__ import annotations

import bisect
import logging
import math
from abc import ABC, abstractmethod
from importlib import resources
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import EditFailedError, EmptyPoolError, NoMarkersError, TooManyStepsError
from .workflows import Workflow, parse_annotated, render

logger = logging.getLogger(__name__)

ScoreFn = Callable[[Workflow], float]


class PoolItem(Protocol):
    workflow: Workflow
    reward: float
    round: int


class Refiner(ABC):
    """Generates complete workflows from a pool of scored complete workflows."""

    @abstractmethod
    def propose(
        self,
        pool: Sequence[PoolItem],
        m: int,
        score_fn: ScoreFn,
        rng: np.random.Generator,
    ) -> list[tuple[Workflow, float]]:
        """Sequentially produce m scored proposals, inserting each into the pool."""


def select_candidate(
    pool: Sequence[PoolItem],
    top_c: int,
    temperature: float,
    rng: np.random.Generator,
) -> PoolItem:
    """Softmax-over-rewards selection among the top-C pool entries.

    Entries are ranked by reward (ties: earliest round, then smallest content
    id); one of the top C is drawn with probability ∝ exp(reward/τ), computed
    in log space — reward/τ reaches 10 at the default τ=0.1.
    """
    entries = list(pool)
    if not entries:
        raise EmptyPoolError("cannot select from an empty pool")
    if top_c < 1:
        raise ValueError("top_c must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    ranked = sorted(
        entries, key=lambda e: (-e.reward, e.round, e.workflow.id.digest)
    )[:top_c]
    logits = np.array([e.reward / temperature for e in ranked])
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    return ranked[int(rng.choice(len(ranked), p=probs))]


class NullRefiner(Refiner):
    """Disabled refinement: M proposals collapse to none (pure exploration)."""

    def propose(self, pool, m, score_fn, rng):
        return []


class SyntheticEpsilonRefiner(Refiner):
    """Test instrumentation with a constructive drift bound.

    With probability 1-ε a proposal is a plain pool resample (an entry drawn
    with probability ∝ its terminal energy — the distribution the resampling
    step would induce anyway), and with probability ε it is a perturbation:
    either a fixed replacement workflow or a uniformly random trajectory over
    the given alphabet. Each proposal's law therefore differs from the
    baseline pool law by at most ε in total variation.
    """

    def __init__(
        self,
        epsilon: float,
        alphabet: "list[str] | None" = None,
        horizon: "int | None" = None,
        replacement: "Workflow | None" = None,
    ):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if epsilon > 0 and replacement is None and alphabet is None:
            raise ValueError("a perturbation needs a replacement or an alphabet")
        self.epsilon = epsilon
        self.alphabet = alphabet
        self.horizon = horizon
        self.replacement = replacement

    def _perturb(self, rng: np.random.Generator) -> Workflow:
        if self.replacement is not None:
            return self.replacement
        assert self.alphabet is not None and self.horizon is not None
        picks = rng.integers(0, len(self.alphabet), size=self.horizon)
        return Workflow.complete(
            (self.alphabet[i] for i in picks), self.horizon
        )

    def propose(self, pool, m, score_fn, rng):
        if m == 0:
            return []
        entries = list(pool)
        if not entries:
            raise EmptyPoolError("cannot refine an empty pool")
        workflows = [e.workflow for e in entries]
        # running cumulative energies support O(log n) draws under insertion
        cum: list[float] = []
        total = 0.0
        for e in entries:
            total += math.exp(e.reward)
            cum.append(total)
        proposals: list[tuple[Workflow, float]] = []
        for _ in range(m):
            if self.epsilon > 0 and rng.random() < self.epsilon:
                workflow = self._perturb(rng)
            else:
                u = rng.random() * total
                workflow = workflows[bisect.bisect_right(cum, u)]
            reward = score_fn(workflow)
            proposals.append((workflow, reward))
            workflows.append(workflow)
            total += math.exp(reward)
            cum.append(total)
        return proposals


DEFAULT_EDIT_TEMPLATE = "edit_prompt.txt"

FORMAT_RULES = (
    "Write the workflow as Python-style code in which every substantive block "
    "is preceded by a comment of the exact form `# Step <n>:` on its own line, "
    "with steps numbered consecutively from 1. Output only the workflow code."
)


def load_prompt(name: str) -> str:
    """Read a prompt template shipped with the package."""
    return resources.files("flowsmc.prompts").joinpath(name).read_text()


class SoftmaxEditRefiner(Refiner):
    """Selection by softmax over rewards, improvement by a single LLM edit.

    The selected workflow is rendered with canonical step markers and sent to
    the edit model with its reward and the format rules; the reply is parsed
    back into a workflow, with one self-correction retry on a parse failure.
    A proposal that still fails parses through as a copy of its source — the
    round must deliver M proposals either way.
    """

    def __init__(
        self,
        gateway,
        template: "str | None" = None,
        top_c: int = 3,
        temperature: float = 0.1,
        edit_temperature: float = 0.0,
        agent_role: str = "senior workflow engineer",
    ):
        if top_c < 1:
            raise ValueError("top_c must be >= 1")
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        self.gateway = gateway
        self.template = template if template is not None else load_prompt(DEFAULT_EDIT_TEMPLATE)
        self.top_c = top_c
        self.temperature = temperature
        self.edit_temperature = edit_temperature
        self.agent_role = agent_role

    def edit_workflow(
        self, source: Workflow, reward: float, rng: np.random.Generator
    ) -> Workflow:
        """One consequential edit of a complete workflow, format preserved."""
        from .gateway import ChatRequest

        prompt = self.template.format(
            source=render(source), reward=f"{reward:.4f}", format_rules=FORMAT_RULES
        )
        last_error = ""
        for attempt in range(2):
            message = prompt if not last_error else (
                prompt
                + "\n\nYour previous reply could not be parsed: "
                + last_error
                + "\nReply again following the format rules exactly."
            )
            replies = self.gateway.call_llm(
                ChatRequest(
                    messages=[message],
                    temperature=self.edit_temperature,
                    num_of_response=1,
                    agent_role=self.agent_role,
                    instructions=FORMAT_RULES,
                )
            )
            try:
                return parse_annotated(replies[0], source.horizon)
            except (NoMarkersError, TooManyStepsError) as exc:
                last_error = str(exc)
        raise EditFailedError(last_error)

    def propose(self, pool, m, score_fn, rng):
        if m == 0:
            return []
        entries = list(pool)
        if not entries:
            raise EmptyPoolError("cannot refine an empty pool")
        working: list = list(entries)
        current_round = max(e.round for e in entries)
        proposals: list[tuple[Workflow, float]] = []
        for _ in range(m):
            source = select_candidate(working, self.top_c, self.temperature, rng)
            try:
                workflow = self.edit_workflow(source.workflow, source.reward, rng)
            except EditFailedError as exc:
                logger.warning("edit failed, passing source through: %s", exc)
                workflow = source.workflow
            reward = score_fn(workflow)
            proposals.append((workflow, reward))
            working.append(_Inserted(workflow, reward, current_round))
        return proposals


class _Inserted:
    """A freshly scored proposal sitting in the working pool."""

    __slots__ = ("workflow", "reward", "round")

    def __init__(self, workflow: Workflow, reward: float, round: int):
        self.workflow = workflow
        self.reward = reward
        self.round = round
