"""Workflows as ordered step sequences.

A workflow is an ordered list of opaque text chunks ("steps") up to a fixed
horizon ``T``. Shorter trajectories are padded with empty-string steps so
every complete workflow has a length-``T`` representation; padding never
enters the content identity and never gets rendered.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .errors import HorizonExceededError, NoMarkersError, TooManyStepsError

DEFAULT_HORIZON = 5

# One marker per line: `# Step <n>:`, case-insensitive on "step".
MARKER_RE = re.compile(r"^[^\S\n]*#[^\S\n]*step[^\S\n]+(\d+)[^\S\n]*:", re.IGNORECASE)

_ID_SEPARATOR = "\x1e"  # record separator; cannot occur in sane step text


class Kind(Enum):
    PREFIX = "prefix"
    COMPLETE = "complete"


@dataclass(frozen=True, slots=True)
class Step:
    """One step of a workflow: a 1-based index and an opaque text chunk."""

    index: int
    text: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"step index must be >= 1, got {self.index}")

    @property
    def is_padding(self) -> bool:
        return self.text == ""


@dataclass(frozen=True, slots=True)
class WorkflowId:
    """Content hash of a workflow's non-padding step texts."""

    digest: str

    def __str__(self) -> str:
        return self.digest


@dataclass(frozen=True, slots=True)
class Workflow:
    """An ordered step sequence, either a prefix or a padded complete workflow.

    Invariants enforced at construction: step indices run 1..len consecutively,
    length never exceeds the horizon, padding steps (empty text) appear only as
    a suffix, and ``kind`` is COMPLETE exactly when the sequence has been
    padded/extended to the horizon.
    """

    steps: tuple[Step, ...]
    horizon: int
    kind: Kind
    _cached_id: WorkflowId | None = field(
        default=None, repr=False, compare=False, hash=False
    )
    _cached_traj: "tuple[str, ...] | None" = field(
        default=None, repr=False, compare=False, hash=False
    )

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if len(self.steps) > self.horizon:
            raise HorizonExceededError(
                f"{len(self.steps)} steps exceed horizon {self.horizon}"
            )
        for pos, step in enumerate(self.steps):
            if step.index != pos + 1:
                raise ValueError("step indices must be consecutive from 1")
        in_padding = False
        for step in self.steps:
            if step.is_padding:
                in_padding = True
            elif in_padding:
                raise ValueError("padding steps may only appear as a suffix")
        is_full = len(self.steps) == self.horizon
        if (self.kind is Kind.COMPLETE) != is_full:
            raise ValueError("kind must be COMPLETE iff padded to horizon")
        if self.kind is Kind.PREFIX and in_padding:
            raise ValueError("a prefix cannot contain padding steps")

    # --- constructors -----------------------------------------------------

    @staticmethod
    def prefix(texts: Iterable[str], horizon: int = DEFAULT_HORIZON) -> "Workflow":
        """A (possibly empty) prefix; promotes to COMPLETE at full length."""
        steps = tuple(Step(i + 1, t) for i, t in enumerate(texts))
        kind = Kind.COMPLETE if len(steps) == horizon else Kind.PREFIX
        return Workflow(steps, horizon, kind)

    @staticmethod
    def complete(texts: Iterable[str], horizon: int = DEFAULT_HORIZON) -> "Workflow":
        """A complete workflow, padded with empty steps up to the horizon."""
        listed = list(texts)
        if len(listed) > horizon:
            raise HorizonExceededError(
                f"{len(listed)} steps exceed horizon {horizon}"
            )
        listed.extend([""] * (horizon - len(listed)))
        return Workflow(
            tuple(Step(i + 1, t) for i, t in enumerate(listed)), horizon, Kind.COMPLETE
        )

    @staticmethod
    def _trusted_complete(texts: Sequence[str], horizon: int) -> "Workflow":
        """Validation-free constructor for internal hot paths.

        Caller guarantees: len(texts) == horizon and no empty texts except a
        trailing padding suffix.
        """
        w = object.__new__(Workflow)
        object.__setattr__(w, "steps", tuple(Step(i + 1, t) for i, t in enumerate(texts)))
        object.__setattr__(w, "horizon", horizon)
        object.__setattr__(w, "kind", Kind.COMPLETE)
        object.__setattr__(w, "_cached_id", None)
        object.__setattr__(w, "_cached_traj", None)
        return w

    def _trusted_extend(self, text: str) -> "Workflow":
        """Validation-free one-step extension; caller guarantees text != ''."""
        n = len(self.steps)
        w = object.__new__(Workflow)
        object.__setattr__(w, "steps", self.steps + (Step(n + 1, text),))
        object.__setattr__(
            w, "kind", Kind.COMPLETE if n + 1 == self.horizon else Kind.PREFIX
        )
        object.__setattr__(w, "horizon", self.horizon)
        object.__setattr__(w, "_cached_id", None)
        object.__setattr__(w, "_cached_traj", None)
        return w

    # --- views ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def texts(self) -> tuple[str, ...]:
        """All step texts, padding included."""
        return tuple(s.text for s in self.steps)

    @property
    def trajectory(self) -> tuple[str, ...]:
        """Non-padding step texts; the logical content of the workflow."""
        if self._cached_traj is None:
            object.__setattr__(
                self,
                "_cached_traj",
                tuple(s.text for s in self.steps if not s.is_padding),
            )
        return self._cached_traj  # type: ignore[return-value]

    @property
    def real_length(self) -> int:
        return len(self.trajectory)

    @property
    def is_complete(self) -> bool:
        return self.kind is Kind.COMPLETE

    @property
    def id(self) -> WorkflowId:
        if self._cached_id is None:
            object.__setattr__(self, "_cached_id", id_of(self))
        return self._cached_id  # type: ignore[return-value]

    def extended(self, text: str) -> "Workflow":
        """This workflow with one more step appended."""
        return concat(self, [text])


def id_of(workflow: Workflow) -> WorkflowId:
    """Deterministic content identity, invariant under padding.

    Hashes the non-padding step texts joined by a separator, so a padded and
    an unpadded rendering of the same trajectory share an id while any edit
    to any real step changes it.
    """
    payload = _ID_SEPARATOR.join(workflow.trajectory)
    return WorkflowId(hashlib.sha256(payload.encode("utf-8")).hexdigest())


def concat(prefix: Workflow, suffix: Sequence[Step | str]) -> Workflow:
    """Append steps to a prefix, renumbering consecutively.

    Raises HorizonExceededError when the combined length would pass the
    horizon. The result is COMPLETE iff it reaches the horizon.
    """
    if prefix.is_complete and len(suffix) > 0:
        raise HorizonExceededError("cannot extend a complete workflow")
    texts = [s.text if isinstance(s, Step) else s for s in suffix]
    total = len(prefix) + len(texts)
    if total > prefix.horizon:
        raise HorizonExceededError(
            f"{total} steps exceed horizon {prefix.horizon}"
        )
    return Workflow.prefix(list(prefix.texts) + texts, prefix.horizon)


def parse_annotated(source: str, horizon: int = DEFAULT_HORIZON) -> Workflow:
    """Split step-marker annotated source into a complete workflow.

    Markers are lines matching ``# Step <n>:`` (any positive integer, case
    insensitive). Markers are taken in positional order and renumbered 1..k;
    the k-th step text runs from just after the k-th marker's colon to the
    start of the next marker's line. Text before the first marker is attached
    to step 1. The result is padded to the horizon.
    """
    matches = []
    offset = 0
    for line in source.splitlines(keepends=True):
        m = MARKER_RE.match(line)
        if m:
            matches.append((offset, offset + m.end()))
        offset += len(line)
    if not matches:
        raise NoMarkersError("no `# Step <n>:` marker found")
    if len(matches) > horizon:
        raise TooManyStepsError(
            f"{len(matches)} step markers exceed horizon {horizon}"
        )
    preamble = source[: matches[0][0]]
    texts = []
    for k, (line_start, text_start) in enumerate(matches):
        end = matches[k + 1][0] if k + 1 < len(matches) else len(source)
        texts.append(source[text_start:end])
    texts[0] = preamble + texts[0]
    return Workflow.complete(texts, horizon)


def render(workflow: Workflow) -> str:
    """Canonical marker-annotated rendering of the non-padding steps.

    Each step becomes ``# Step <i>:`` followed by its text; a text that does
    not end with a newline gets one appended so the next marker starts a line
    (markers are line-anchored). Padding steps are never rendered.
    """
    parts = []
    traj = workflow.trajectory
    for i, text in enumerate(traj):
        if i + 1 < len(traj) and not text.endswith("\n"):
            text += "\n"
        parts.append(f"# Step {i + 1}:{text}")
    return "".join(parts)
