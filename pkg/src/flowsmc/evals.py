"""Dataset loading, per-example answer scoring, and workflow-scaling metrics.

Datasets are JSON lines, one ``{"id", "question", "answer"}`` object per line
with an optional ``"split"`` field; without explicit splits a seeded 1:4
validation:test assignment is drawn. Scorers map (prediction, gold) to [0, 1]
and are deterministic, so aggregates are reproducible regardless of
evaluation order.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetParseError, ShapeMismatchError

VALIDATION_FRACTION = 0.2  # 1:4 validation:test


@dataclass(frozen=True, slots=True)
class TaskExample:
    id: str
    question: str
    answer: str
    split: str  # validation | test


def load_dataset(path: "str | Path", split_seed: int = 0) -> list[TaskExample]:
    """Parse a JSONL dataset, auto-splitting 1:4 when no split field exists."""
    lines = Path(path).read_text().splitlines()
    raw = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            raw.append(
                (str(doc["id"]), str(doc["question"]), str(doc["answer"]), doc.get("split"))
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetParseError(str(exc), lineno) from exc
    ids = [r[0] for r in raw]
    if len(set(ids)) != len(ids):
        raise DatasetParseError("duplicate example ids", 0)
    if all(r[3] is None for r in raw):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(split_seed)))
        order = rng.permutation(len(raw))
        n_val = round(len(raw) * VALIDATION_FRACTION)
        val_idx = set(order[:n_val].tolist())
        splits = ["validation" if i in val_idx else "test" for i in range(len(raw))]
    else:
        splits = []
        for lineno, r in enumerate(raw, start=1):
            if r[3] not in ("validation", "test"):
                raise DatasetParseError(f"bad split {r[3]!r}", lineno)
            splits.append(r[3])
    return [
        TaskExample(r[0], r[1], r[2], s) for r, s in zip(raw, splits)
    ]


def split_of(examples: Sequence[TaskExample], split: str) -> list[TaskExample]:
    return [e for e in examples if e.split == split]


# --- scorers -------------------------------------------------------------------

class ExactMatchScorer:
    """Strict string equality after whitespace trim."""

    def score(self, prediction: str, gold: str) -> float:
        return 1.0 if prediction.strip() == gold.strip() else 0.0


_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


def extract_number(text: str) -> "float | None":
    """Content of the last \\boxed{...} if present, else the last number."""
    boxed = _BOXED_RE.findall(text)
    candidates = boxed[-1:] if boxed else [text]
    numbers = _NUMBER_RE.findall(candidates[-1])
    if not numbers:
        return None
    return float(numbers[-1])


class NumericScorer:
    """Last boxed/last-number extraction, equal within an absolute tolerance."""

    def __init__(self, tolerance: float = 1e-6):
        self.tolerance = tolerance

    def score(self, prediction: str, gold: str) -> float:
        pred = extract_number(prediction)
        target = extract_number(gold)
        if pred is None or target is None:
            return 0.0
        return 1.0 if abs(pred - target) <= self.tolerance else 0.0


class TokenF1Scorer:
    """Whitespace-token precision/recall harmonic mean."""

    def score(self, prediction: str, gold: str) -> float:
        return token_f1(prediction, gold)


class ChoiceLetterScorer:
    """Single capital letter equality; extracts the first A-J in the prediction."""

    def score(self, prediction: str, gold: str) -> float:
        letters = re.findall(r"[A-J]", prediction)
        return 1.0 if letters and letters[0] == gold.strip() else 0.0


SCORERS = {
    "exact": ExactMatchScorer,
    "numeric": NumericScorer,
    "token_f1": TokenF1Scorer,
    "choice": ChoiceLetterScorer,
}


def token_f1(prediction: str, gold: str) -> float:
    """Token-overlap F1; both empty scores 1, exactly one empty scores 0."""
    pred_tokens = prediction.split()
    gold_tokens = gold.split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


# --- workflow-scaling metrics ------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ScalingMetrics:
    best: float
    mean: float
    majority: float
    n_workflows: int
    n_examples: int

    def as_dict(self) -> dict:
        return {
            "best": self.best,
            "mean": self.mean,
            "majority": self.majority,
            "L": self.n_workflows,
            "E": self.n_examples,
        }


def scaling_metrics(
    answers: Sequence[Sequence[str]],
    gold: Sequence[str],
    scorer=None,
) -> ScalingMetrics:
    """Best@L / Mean@L / Majority@L over an E×L answer matrix.

    best: fraction of examples where at least one of the L answers is correct;
    mean: average per-example fraction of correct answers; majority: fraction
    where the single most frequent answer is correct — a tie for the mode
    counts as incorrect.
    """
    scorer = scorer if scorer is not None else ExactMatchScorer()
    if len(answers) != len(gold):
        raise ShapeMismatchError(
            f"{len(answers)} answer rows vs {len(gold)} gold answers"
        )
    if len(answers) == 0:
        raise ShapeMismatchError("empty answer matrix")
    widths = {len(row) for row in answers}
    if len(widths) != 1:
        raise ShapeMismatchError(f"ragged answer matrix: row widths {sorted(widths)}")
    n_workflows = widths.pop()
    if n_workflows < 1:
        raise ShapeMismatchError("need at least one answer per example")

    best_hits = mean_total = majority_hits = 0.0
    for row, target in zip(answers, gold):
        correct = [scorer.score(a, target) >= 1.0 for a in row]
        best_hits += 1.0 if any(correct) else 0.0
        mean_total += sum(correct) / n_workflows
        counts = Counter(row)
        top = counts.most_common()
        is_tie = len(top) > 1 and top[0][1] == top[1][1]
        if not is_tie and scorer.score(top[0][0], target) >= 1.0:
            majority_hits += 1.0
    n = len(answers)
    return ScalingMetrics(
        best=best_hits / n,
        mean=mean_total / n,
        majority=majority_hits / n,
        n_workflows=n_workflows,
        n_examples=n,
    )


def validation_accuracy(
    per_example_scores: Sequence[float],
) -> float:
    """Order-independent mean of per-example scores (compensated summation)."""
    values = list(per_example_scores)
    if not values:
        raise ValueError("no scores")
    return math.fsum(values) / len(values)
