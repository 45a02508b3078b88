"""Autoregressive step priors.

Two implementations of the same interface: an exactly-specified tabular
prior over a finite step alphabet (the test and oracle workhorse) and a
language-model-backed prior that elicits step-annotated code through a
gateway (see :mod:`flowsmc.llm_prior`).
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from bisect import bisect_right
from pathlib import Path

import numpy as np

from .errors import HorizonExceededError, MissingContextError
from .workflows import Step, Workflow

_ROW_TOL = 1e-9


_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: (output word, advanced state)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), x


def _pcg_state(seed: int, path: tuple[int, ...]) -> dict:
    """PCG64 state keyed by (seed, *path) through a splitmix64 chain."""
    acc = seed & _MASK64
    for element in path:
        out, _ = _mix64(acc ^ (element & _MASK64))
        acc = out
    s1, acc = _mix64(acc)
    s2, acc = _mix64(acc)
    s3, acc = _mix64(acc)
    s4, acc = _mix64(acc)
    return {
        "bit_generator": "PCG64",
        "state": {"state": (s1 << 64) | s2, "inc": ((s3 << 64) | s4) | 1},
        "has_uint32": 0,
        "uinteger": 0,
    }


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """A fresh generator keyed by (seed, *path).

    Stateless derivation: the same key always yields the same stream, so
    per-particle streams agree between serial and parallel execution.
    """
    bit_gen = np.random.PCG64(0)
    bit_gen.state = _pcg_state(seed, path)
    return np.random.Generator(bit_gen)


class StreamPool:
    """Key-derived streams on one reusable generator object.

    ``rng(seed, *path)`` yields bit-identical draws to ``derive_rng`` with the
    same key but skips per-call object construction. The returned generator is
    shared state — valid only until the next ``rng`` call — so each concurrent
    task must own its own pool.
    """

    __slots__ = ("_bit_gen", "_gen")

    def __init__(self) -> None:
        self._bit_gen = np.random.PCG64(0)
        self._gen = np.random.Generator(self._bit_gen)

    def rng(self, seed: int, *path: int) -> np.random.Generator:
        self._bit_gen.state = _pcg_state(seed, path)
        return self._gen


class PriorModel(ABC):
    """Autoregressive distribution over workflow steps, one step at a time."""

    horizon: int

    @abstractmethod
    def extend_one(self, prefix: Workflow, rng: np.random.Generator) -> Step:
        """Sample the next step given a prefix. Errors on a complete input."""

    def rollout(self, prefix: Workflow, rng: np.random.Generator) -> Workflow:
        """Extend a prefix step by step until the horizon.

        The returned workflow is complete and begins with ``prefix`` verbatim.
        A complete input is returned unchanged (empty-suffix case).
        """
        current = prefix
        while not current.is_complete:
            current = current.extended(self.extend_one(current, rng).text)
        return current


class TabularPrior(PriorModel):
    """Exact categorical prior over a finite alphabet of step texts.

    ``rows`` maps a context (tuple of alphabet indices, length < horizon) to a
    probability vector over the alphabet; ``default_row``, when given, backs
    any context without an explicit entry. Every row must sum to 1 within
    1e-9.
    """

    def __init__(
        self,
        alphabet: list[str],
        horizon: int,
        rows: dict[tuple[int, ...], "np.ndarray | list[float]"],
        default_row: "np.ndarray | list[float] | None" = None,
    ):
        if len(set(alphabet)) != len(alphabet):
            raise ValueError("alphabet symbols must be distinct")
        if any(sym == "" for sym in alphabet):
            raise ValueError("the empty string is reserved for padding")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.alphabet = list(alphabet)
        self.horizon = horizon
        self._index = {sym: i for i, sym in enumerate(alphabet)}
        self._ctx_cache: dict[tuple[str, ...], tuple[int, ...]] = {}
        self.rows: dict[tuple[int, ...], np.ndarray] = {}
        self._cum: dict[tuple[int, ...], list[float]] = {}
        for ctx, probs in rows.items():
            self.rows[tuple(ctx)] = self._check_row(tuple(ctx), probs)
        self.default_row = (
            None if default_row is None else self._check_row((), default_row)
        )
        self._default_cum = (
            None if self.default_row is None else self.default_row.cumsum().tolist()
        )

    def _check_row(self, ctx: tuple[int, ...], probs) -> np.ndarray:
        row = np.asarray(probs, dtype=float)
        if row.shape != (len(self.alphabet),):
            raise ValueError(f"row {ctx} has wrong length")
        if (row < 0).any() or abs(row.sum() - 1.0) > _ROW_TOL:
            raise ValueError(f"row {ctx} is not a probability vector")
        return row

    # --- constructors -----------------------------------------------------

    @staticmethod
    def uniform(alphabet: list[str], horizon: int) -> "TabularPrior":
        """Uniform step distribution for every context (i.i.d. steps)."""
        row = np.full(len(alphabet), 1.0 / len(alphabet))
        return TabularPrior(alphabet, horizon, {}, default_row=row)

    @staticmethod
    def from_json(path: str | Path) -> "TabularPrior":
        """Load the serialized form: contexts are index lists joined by ','."""
        doc = json.loads(Path(path).read_text())
        rows = {}
        for key, probs in doc["rows"].items():
            ctx = tuple(int(i) for i in key.split(",")) if key else ()
            rows[ctx] = np.asarray(probs, dtype=float)
        default = doc.get("default_row")
        return TabularPrior(doc["alphabet"], int(doc["horizon"]), rows, default_row=default)

    def to_json(self, path: str | Path) -> None:
        doc = {
            "alphabet": self.alphabet,
            "horizon": self.horizon,
            "rows": {
                ",".join(str(i) for i in ctx): row.tolist()
                for ctx, row in sorted(self.rows.items())
            },
        }
        if self.default_row is not None:
            doc["default_row"] = self.default_row.tolist()
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    # --- sampling ---------------------------------------------------------

    def context_of(self, prefix: Workflow) -> tuple[int, ...]:
        # resampled populations repeat a handful of prefixes thousands of
        # times; memoize by trajectory
        traj = prefix.trajectory
        ctx = self._ctx_cache.get(traj)
        if ctx is None:
            try:
                ctx = tuple(self._index[t] for t in traj)
            except KeyError as exc:
                raise MissingContextError(f"unknown step text {exc.args[0]!r}") from exc
            self._ctx_cache[traj] = ctx
        return ctx

    def row_for(self, context: tuple[int, ...]) -> np.ndarray:
        row = self.rows.get(context)
        if row is not None:
            return row
        if self.default_row is not None:
            return self.default_row
        raise MissingContextError(f"no row for context {context}")

    def _draw(self, context: tuple[int, ...], rng: np.random.Generator) -> int:
        cum = self._cum.get(context)
        if cum is None:
            if context in self.rows:
                cum = self.rows[context].cumsum().tolist()
                self._cum[context] = cum
            elif self._default_cum is not None:
                cum = self._default_cum
            else:
                raise MissingContextError(f"no row for context {context}")
        # plain bisect beats numpy searchsorted on alphabet-sized rows
        idx = bisect_right(cum, rng.random())
        return idx if idx < len(cum) else len(cum) - 1

    def extend_one(self, prefix: Workflow, rng: np.random.Generator) -> Step:
        if prefix.is_complete:
            raise HorizonExceededError("prefix already at horizon")
        idx = self._draw(self.context_of(prefix), rng)
        return Step(len(prefix) + 1, self.alphabet[idx])

    def rollout(self, prefix: Workflow, rng: np.random.Generator) -> Workflow:
        # index-space loop; builds the final workflow object once
        if prefix.is_complete:
            return prefix
        ctx = list(self.context_of(prefix))
        while len(ctx) < self.horizon:
            ctx.append(self._draw(tuple(ctx), rng))
        return Workflow._trusted_complete(
            [self.alphabet[i] for i in ctx], self.horizon
        )

    # --- exact quantities (used by the oracle) -----------------------------

    def step_probability(self, context: tuple[int, ...], symbol: int) -> float:
        return float(self.row_for(context)[symbol])

    def trajectory_probability(self, indices: tuple[int, ...]) -> float:
        p = 1.0
        for t, sym in enumerate(indices):
            p *= self.step_probability(indices[:t], sym)
        return p
