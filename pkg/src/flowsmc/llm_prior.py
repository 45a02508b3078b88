"""Language-model-backed autoregressive prior over workflow steps.

The model is prompted to emit workflow code with a `# Step <n>:` marker before
every substantive block. Extension asks for exactly one next step; rollout
asks for all remaining steps; both are parsed back through the workflow
grammar so every emitted workflow either parses or is rejected and retried
with the captured error log.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import (
    FlowSMCError,
    GenerationFailedError,
    NoMarkersError,
    SelfCorrectionExhaustedError,
    TooManyStepsError,
)
from .gateway import ChatRequest, LLMGateway
from .priors import PriorModel
from .refiners import FORMAT_RULES, load_prompt
from .workflows import Step, Workflow, concat, parse_annotated, render

SELF_CORRECTION_NOTE = (
    "Do not use any try-except blocks. Fix the root cause rather than catching it."
)

# Returns an error log when the workflow fails downstream checks, else None.
WorkflowValidator = Callable[[Workflow], "str | None"]


class LLMPrior(PriorModel):
    """Step prior elicited from a chat model through the gateway."""

    def __init__(
        self,
        gateway: LLMGateway,
        horizon: int,
        task: str,
        agent_role: str = "expert workflow engineer",
        extend_temperature: float = 0.8,
        rollout_temperature: float = 0.8,
        max_attempts: int = 3,
        validator: "WorkflowValidator | None" = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.gateway = gateway
        self.horizon = horizon
        self.task = task
        self.agent_role = agent_role
        self.extend_temperature = extend_temperature
        self.rollout_temperature = rollout_temperature
        self.max_attempts = max_attempts
        self.validator = validator
        self._generate_template = load_prompt("prior_generate.txt")
        self._continue_template = load_prompt("prior_continue.txt")
        self._extend_template = load_prompt("prior_extend.txt")

    # --- elicitation ---------------------------------------------------------

    def _ask(self, prompt: str, temperature: float) -> str:
        replies = self.gateway.call_llm(
            ChatRequest(
                messages=[prompt],
                temperature=temperature,
                num_of_response=1,
                agent_role=self.agent_role,
                instructions=FORMAT_RULES,
            )
        )
        return replies[0]

    def generate_with_self_correction(
        self, context_prompt: str, error_log: "str | None" = None
    ) -> Workflow:
        """A full parseable (and, with a validator attached, runnable) workflow.

        Each failed attempt re-invokes the model with the same prompt
        augmented by the captured error log and the no-try-except note, up to
        the attempt budget.
        """
        last_log = error_log or ""
        for _ in range(self.max_attempts):
            prompt = context_prompt
            if last_log:
                prompt = (
                    f"{context_prompt}\n\nThe previous attempt failed with this "
                    f"error log:\n{last_log}\n\n{SELF_CORRECTION_NOTE}"
                )
            reply = self._ask(prompt, self.rollout_temperature)
            try:
                workflow = parse_annotated(reply, self.horizon)
            except (NoMarkersError, TooManyStepsError) as exc:
                last_log = str(exc)
                continue
            if self.validator is not None:
                failure = self.validator(workflow)
                if failure is not None:
                    last_log = failure
                    continue
            return workflow
        raise SelfCorrectionExhaustedError(
            f"no valid workflow after {self.max_attempts} attempts", last_log
        )

    def generate(self) -> Workflow:
        """A fresh complete workflow for the configured task."""
        prompt = self._generate_template.format(
            task=self.task, horizon=self.horizon, format_rules=FORMAT_RULES
        )
        return self.generate_with_self_correction(prompt)

    # --- PriorModel interface ---------------------------------------------------

    def extend_one(self, prefix: Workflow, rng: np.random.Generator) -> Step:
        """One next step; sampling randomness lives on the model side."""
        del rng  # present for interface symmetry; the model samples server-side
        if prefix.is_complete:
            raise GenerationFailedError("prefix already at horizon")
        prompt = self._extend_template.format(
            task=self.task,
            horizon=self.horizon,
            prefix=render(prefix) if len(prefix) else "(empty — start from step 1)",
            next_index=len(prefix) + 1,
            format_rules=FORMAT_RULES,
        )
        last_log = ""
        for _ in range(self.max_attempts):
            attempt_prompt = prompt
            if last_log:
                attempt_prompt = (
                    f"{prompt}\n\nThe previous attempt failed with this error "
                    f"log:\n{last_log}\n\n{SELF_CORRECTION_NOTE}"
                )
            reply = self._ask(attempt_prompt, self.extend_temperature)
            try:
                parsed = parse_annotated(reply, self.horizon)
            except FlowSMCError as exc:
                last_log = str(exc)
                continue
            return Step(len(prefix) + 1, parsed.trajectory[0])
        raise GenerationFailedError(
            f"no parseable step after {self.max_attempts} attempts: {last_log}"
        )

    def rollout(self, prefix: Workflow, rng: np.random.Generator) -> Workflow:
        """All remaining steps in one call; the prefix is preserved verbatim."""
        del rng
        if prefix.is_complete:
            return prefix
        if len(prefix) == 0:
            return self.generate()
        prompt = self._continue_template.format(
            task=self.task,
            horizon=self.horizon,
            prefix=render(prefix),
            next_index=len(prefix) + 1,
            format_rules=FORMAT_RULES,
        )
        last_log = ""
        for _ in range(self.max_attempts):
            attempt_prompt = prompt
            if last_log:
                attempt_prompt = (
                    f"{prompt}\n\nThe previous attempt failed with this error "
                    f"log:\n{last_log}\n\n{SELF_CORRECTION_NOTE}"
                )
            reply = self._ask(attempt_prompt, self.rollout_temperature)
            try:
                continuation = parse_annotated(reply, self.horizon)
                suffix = list(continuation.trajectory)[: self.horizon - len(prefix)]
                extended = concat(prefix, suffix)
            except FlowSMCError as exc:
                last_log = str(exc)
                continue
            complete = Workflow.complete(extended.trajectory, self.horizon)
            if self.validator is not None:
                failure = self.validator(complete)
                if failure is not None:
                    last_log = failure
                    continue
            return complete
        raise SelfCorrectionExhaustedError(
            f"no valid completion after {self.max_attempts} attempts", last_log
        )
