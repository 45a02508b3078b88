"""Step-level sequential Monte Carlo over workflows.

One round: extend every prefix by one prior step, estimate each new prefix's
downstream value with K look-ahead rollouts, let the refiner inject M extra
complete workflows into the pool, then resample N prefixes and archive every
complete workflow seen. Iterating to the horizon and taking the archive-wide
reward argmax yields the search output; without refinement the resampled
population converges to the tilted posterior p·exp(R)/Z.

Weights: a particle's stored weight is the raw mean of its K rollout
energies (its look-ahead value estimate, kept in log space). Resampling uses
the incremental ratio weight/parent-selection-weight, which telescopes the
per-round tilts so the final population targets the posterior rather than a
compounded look-ahead tilt; the raw weights are what ESS and the per-round
diagnostics report.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyPoolError
from .priors import PriorModel, StreamPool, derive_rng
from .refiners import Refiner
from .rewards import RewardCache, RewardModel, energy
from .workflows import Workflow, render

_REFINE_STREAM = 2**33 + 1
_RESAMPLE_STREAM = 2**33 + 2


# --- weight utilities -------------------------------------------------------

def normalize(weights: Sequence[float]) -> np.ndarray:
    """Positive weights -> probability vector, in log space with max-subtraction."""
    arr = np.asarray(weights, dtype=float)
    if arr.size == 0:
        raise EmptyPoolError("cannot normalize an empty weight list")
    if np.any(arr <= 0):
        raise ValueError("weights must be strictly positive")
    return normalize_log(np.log(arr))


def normalize_log(log_weights: Sequence[float]) -> np.ndarray:
    arr = np.asarray(log_weights, dtype=float)
    if arr.size == 0:
        raise EmptyPoolError("cannot normalize an empty weight list")
    shifted = np.exp(arr - arr.max())
    return shifted / shifted.sum()


def ess(weights: Sequence[float]) -> float:
    """Effective sample size (Σw)²/Σw²; N for equal weights, 1 when degenerate."""
    arr = np.asarray(weights, dtype=float)
    if arr.size == 0:
        raise EmptyPoolError("cannot compute ESS of an empty weight list")
    if np.any(arr <= 0):
        raise ValueError("weights must be strictly positive")
    total = arr.sum()
    return float(total * total / np.dot(arr, arr))


def resample_indices(
    probs: np.ndarray, n: int, rng: np.random.Generator, scheme: str = "multinomial"
) -> np.ndarray:
    """n ancestor indices drawn from a probability vector."""
    cum = np.cumsum(probs)
    if scheme == "multinomial":
        points = rng.random(n)
    elif scheme == "systematic":
        points = (rng.random() + np.arange(n)) / n
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return np.minimum(np.searchsorted(cum, points, side="right"), len(probs) - 1)


def resample(pool, n: int, rng: np.random.Generator, scheme: str = "multinomial") -> list:
    """Draw n items from (item, weight) pairs, replicating by weight.

    Multinomial by default: n independent categorical draws, so item i's
    replication count has expectation n·w̄_i.
    """
    pool = list(pool)
    if not pool:
        raise EmptyPoolError("cannot resample from an empty pool")
    probs = normalize([w for _, w in pool])
    idx = resample_indices(probs, n, rng, scheme)
    return [pool[i][0] for i in idx]


# --- core types --------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Particle:
    """A prefix with its look-ahead weight and the rollouts that scored it.

    ``log_weight`` is log of the mean rollout energy; for a particle that
    entered through refinement it is the proposal's own reward (log exp(R)).
    """

    prefix: Workflow
    log_weight: float
    rollouts: tuple[tuple[Workflow, float], ...] = ()
    provenance: str = "rollout"

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


@dataclass(frozen=True, slots=True)
class PoolEntry:
    """One archived complete workflow."""

    workflow: Workflow
    reward: float
    round: int
    provenance: str  # rollout | refinement

    @property
    def id(self) -> str:
        return self.workflow.id.digest


class Archive:
    """All complete workflows seen across rounds, deduplicated by content id.

    The earliest-round record wins; insertion order is deterministic, which
    keeps serialized archives byte-identical across reruns. Trajectories key
    the map directly (they determine the content id bijectively).
    """

    def __init__(self) -> None:
        self._entries: dict[tuple[str, ...], PoolEntry] = {}

    def add(self, workflow: Workflow, reward: float, round: int, provenance: str) -> None:
        key = workflow.trajectory
        if key not in self._entries:
            self._entries[key] = PoolEntry(workflow, reward, round, provenance)

    def entries(self) -> list[PoolEntry]:
        return list(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def best(self) -> PoolEntry:
        """Highest reward; ties break to the earliest round, then smallest id."""
        if not self._entries:
            raise EmptyPoolError("archive is empty")
        return min(
            self._entries.values(), key=lambda e: (-e.reward, e.round, e.id)
        )


@dataclass(frozen=True, slots=True)
class RoundStats:
    round: int
    n: int
    ess: float
    min_reward: float
    mean_reward: float
    max_reward: float
    completes: int


@dataclass
class RoundPool:
    """Mutable state of one engine round."""

    round: int
    particles: list[Particle]
    proposals: list[tuple[Workflow, float]] = field(default_factory=list)
    archive: Archive = field(default_factory=Archive)
    stats: "RoundStats | None" = None


@dataclass(frozen=True)
class RunConfig:
    n_particles: int = 10
    rollouts_per_particle: int = 1
    refinements_per_round: int = 10
    horizon: int = 5
    seed: int = 0
    extend_temperature: float = 0.8
    rollout_temperature: float = 0.8
    refine_temperature: float = 0.0
    refiner: str = "none"
    resampling: str = "multinomial"
    workers: int = 1
    include_archive_in_pool: bool = False

    def __post_init__(self) -> None:
        if self.n_particles < 1:
            raise ConfigError("n_particles must be >= 1")
        if self.rollouts_per_particle < 1:
            raise ConfigError("rollouts_per_particle must be >= 1")
        if self.refinements_per_round < 0:
            raise ConfigError("refinements_per_round must be >= 0")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.resampling not in ("multinomial", "systematic"):
            raise ConfigError(f"unknown resampling scheme {self.resampling!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class RunResult:
    config: RunConfig
    archive: list[PoolEntry]
    best: PoolEntry
    rounds: list[RoundStats]
    final_population: list[Particle]

    def final_trajectories(self) -> list[tuple[str, ...]]:
        return [p.prefix.trajectory for p in self.final_population]


# --- operations ---------------------------------------------------------------

def lookahead_weight(
    prior: PriorModel,
    reward_model: RewardModel,
    prefix: Workflow,
    k: int,
    rng: np.random.Generator,
) -> tuple[float, list[tuple[Workflow, float]]]:
    """Mean terminal energy over K stochastic completions of a prefix.

    Returns the weight (1/K)·Σ exp(R(prefix + completion)) and the K scored
    complete rollouts. A complete prefix is its own (unique) completion, so
    the weight degenerates to exp(R).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rollouts = []
    rewards = []
    for _ in range(k):
        complete = prior.rollout(prefix, rng)
        r = reward_model.score(complete)
        rollouts.append((complete, r))
        rewards.append(r)
    # log-space mean of energies: logsumexp(R) - log k
    m = max(rewards)
    log_weight = m + math.log(math.fsum(math.exp(r - m) for r in rewards)) - math.log(k)
    return math.exp(log_weight), rollouts


def step_update(
    pool: RoundPool,
    prior: PriorModel,
    reward_model: RewardModel,
    refiner: "Refiner | None",
    cfg: RunConfig,
) -> tuple[list[Particle], list[PoolEntry]]:
    """One engine round: extend, look-ahead score, refine, augment, resample.

    Input particles carry the selection weight that brought them here (their
    previous-round look-ahead weight); the resampling probability of each
    extended particle is its fresh look-ahead weight divided by that parent
    weight. Returns the resampled population and every complete workflow the
    round produced.
    """
    t = pool.round
    n = len(pool.particles)
    completes: list[PoolEntry] = []

    extended: list[Particle] = []
    parent_log_weights = np.empty(n)
    streams = StreamPool()  # bit-identical to derive_rng(seed, t, i), but pooled
    for i, particle in enumerate(pool.particles):
        rng = streams.rng(cfg.seed, t, i)
        prefix = particle.prefix
        if not prefix.is_complete:
            step = prior.extend_one(prefix, rng)
            prefix = prefix._trusted_extend(step.text)
        weight, rollouts = lookahead_weight(
            prior, reward_model, prefix, cfg.rollouts_per_particle, rng
        )
        extended.append(
            Particle(prefix, math.log(weight), tuple(rollouts), "rollout")
        )
        parent_log_weights[i] = particle.log_weight
        for complete, r in rollouts:
            pool.archive.add(complete, r, t, "rollout")
            completes.append(PoolEntry(complete, r, t, "rollout"))

    proposals: list[tuple[Workflow, float]] = []
    if refiner is not None and cfg.refinements_per_round > 0:
        refine_rng = derive_rng(cfg.seed, t, _REFINE_STREAM)
        candidate_pool = list(
            pool.archive.entries() if cfg.include_archive_in_pool else completes
        )
        proposals = refiner.propose(
            candidate_pool,
            cfg.refinements_per_round,
            lambda wf: reward_model.score(wf),
            refine_rng,
        )
        for workflow, r in proposals:
            pool.archive.add(workflow, r, t, "refinement")
            completes.append(PoolEntry(workflow, r, t, "refinement"))
    pool.proposals = proposals

    # augmented pool: N extended particles plus M projected proposals
    augmented = list(extended)
    aug_parent_lw = list(parent_log_weights)
    for workflow, r in proposals:
        augmented.append(
            Particle(_project(workflow, t), r, ((workflow, r),), "refinement")
        )
        aug_parent_lw.append(0.0)

    log_ratio = np.array([p.log_weight for p in augmented]) - np.array(aug_parent_lw)
    probs = normalize_log(log_ratio)
    idx = resample_indices(
        probs, n, derive_rng(cfg.seed, t, _RESAMPLE_STREAM), cfg.resampling
    )
    selected = [augmented[i] for i in idx]

    rewards = np.array([e.reward for e in completes])
    pool.particles = selected
    pool.stats = RoundStats(
        round=t,
        n=n,
        ess=ess(np.exp(log_ratio - log_ratio.max())),
        min_reward=float(rewards.min()),
        mean_reward=float(rewards.mean()),
        max_reward=float(rewards.max()),
        completes=len(completes),
    )
    return selected, completes


def _project(workflow: Workflow, t: int) -> Workflow:
    """First t steps of a complete proposal.

    A proposal whose real trajectory already ended before step t stays the
    complete padded workflow it is — there is nothing left to extend.
    """
    if workflow.real_length <= t:
        return workflow
    return Workflow.prefix(workflow.trajectory[:t], workflow.horizon)


def run(
    cfg: RunConfig,
    prior: PriorModel,
    reward_model: RewardModel,
    refiner: "Refiner | None" = None,
    out_dir: "str | Path | None" = None,
) -> RunResult:
    """Full search: T rounds from an empty prefix pool, archive-wide argmax.

    The reward model is wrapped in an evaluate-once cache for the run unless
    the caller already supplies one. On error the partial archive written so
    far is preserved on disk.
    """
    if prior.horizon != cfg.horizon:
        raise ConfigError(
            f"prior horizon {prior.horizon} != config horizon {cfg.horizon}"
        )
    cache = (
        reward_model
        if isinstance(reward_model, RewardCache)
        else RewardCache(
            reward_model,
            None if out_dir is None else Path(out_dir) / "rewards.jsonl",
        )
    )
    empty = Workflow.prefix([], cfg.horizon)
    particles = [Particle(empty, 0.0) for _ in range(cfg.n_particles)]
    archive = Archive()
    rounds: list[RoundStats] = []
    try:
        for t in range(1, cfg.horizon + 1):
            cache.round = t
            pool = RoundPool(round=t, particles=particles, archive=archive)
            particles, _ = step_update(pool, prior, cache, refiner, cfg)
            assert pool.stats is not None
            rounds.append(pool.stats)
    finally:
        if out_dir is not None and len(archive) > 0:
            _write_partial(Path(out_dir), archive)
    result = RunResult(
        config=cfg,
        archive=archive.entries(),
        best=archive.best(),
        rounds=rounds,
        final_population=particles,
    )
    if out_dir is not None:
        write_run_artifacts(result, out_dir)
    return result


# --- artifacts -----------------------------------------------------------------

def archive_line(entry: PoolEntry) -> str:
    return json.dumps(
        {
            "id": entry.id,
            "round": entry.round,
            "provenance": entry.provenance,
            "reward": entry.reward,
            "steps": list(entry.workflow.trajectory),
        },
        sort_keys=True,
    )


def _write_partial(out: Path, archive: Archive) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "archive.jsonl").open("w") as fh:
        for entry in archive.entries():
            fh.write(archive_line(entry) + "\n")


def write_run_artifacts(result: RunResult, out_dir: "str | Path") -> None:
    """config.json, archive.jsonl, rounds.jsonl, and best.txt for a run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(result.config), sort_keys=True, indent=2) + "\n")
    with (out / "archive.jsonl").open("w") as fh:
        for entry in result.archive:
            fh.write(archive_line(entry) + "\n")
    with (out / "rounds.jsonl").open("w") as fh:
        for stats in result.rounds:
            fh.write(json.dumps(asdict(stats), sort_keys=True) + "\n")
    (out / "best.txt").write_text(render(result.best.workflow))
