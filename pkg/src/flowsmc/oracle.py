"""Brute-force ground truth on small discrete instances.

Enumerates every trajectory of a tabular prior/reward pair and computes the
exact prior p, reward vector R, partition function Z, tilted posterior
q = p·exp(R)/Z, per-level look-ahead marginals, and the distances and
objectives the convergence checks are stated in.

Trajectories are encoded in mixed radix (alphabet index per step, first step
most significant), so all trajectories sharing a prefix form one contiguous
block and distributions are plain dense vectors.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import (
    InstanceTooLargeError,
    SupportMismatchError,
    UnreachablePrefixError,
)
from .priors import TabularPrior
from .rewards import TabularReward
from .workflows import Workflow

MAX_TRAJECTORIES = 10**6


class ExactInstance:
    """Full enumeration of a (TabularPrior, TabularReward) pair."""

    def __init__(self, prior: TabularPrior, reward: TabularReward):
        size = len(prior.alphabet) ** prior.horizon
        if size > MAX_TRAJECTORIES:
            raise InstanceTooLargeError(
                f"{size} trajectories exceed the {MAX_TRAJECTORIES} cap"
            )
        self.prior = prior
        self.reward_model = reward
        self.alphabet = prior.alphabet
        self.n_symbols = len(prior.alphabet)
        self.horizon = prior.horizon

        # transition[t][code, a] = p(a | prefix with code of length t)
        self.transition: list[np.ndarray] = []
        for t in range(self.horizon):
            rows = np.empty((self.n_symbols**t, self.n_symbols))
            for code in range(rows.shape[0]):
                rows[code] = prior.row_for(self._decode(code, t))
            self.transition.append(rows)

        # level_prior[t][code] = p(prefix), level 0 is the empty prefix
        self.level_prior: list[np.ndarray] = [np.ones(1)]
        for t in range(self.horizon):
            self.level_prior.append(
                (self.level_prior[t][:, None] * self.transition[t]).ravel()
            )

        self.p = self.level_prior[self.horizon]
        self.r = np.array(
            [reward.score(self.workflow_of(code)) for code in range(size)]
        )
        weighted = self.p * np.exp(self.r)
        self.z = float(weighted.sum())
        self.q = weighted / self.z

        # lookahead[t][code] = sum over suffixes of p(suffix|prefix)·exp(R)
        self.lookahead: list[np.ndarray] = [None] * (self.horizon + 1)  # type: ignore[list-item]
        self.lookahead[self.horizon] = np.exp(self.r)
        for t in range(self.horizon - 1, -1, -1):
            nxt = self.lookahead[t + 1].reshape(-1, self.n_symbols)
            self.lookahead[t] = (self.transition[t] * nxt).sum(axis=1)

    # --- encoding -----------------------------------------------------------

    def _decode(self, code: int, length: int) -> tuple[int, ...]:
        digits = []
        for _ in range(length):
            digits.append(code % self.n_symbols)
            code //= self.n_symbols
        return tuple(reversed(digits))

    def encode(self, texts: Sequence[str]) -> int:
        code = 0
        for text in texts:
            code = code * self.n_symbols + self.alphabet.index(text)
        return code

    def trajectory_of(self, code: int) -> tuple[str, ...]:
        return tuple(self.alphabet[i] for i in self._decode(code, self.horizon))

    def workflow_of(self, code: int) -> Workflow:
        return Workflow.complete(self.trajectory_of(code), self.horizon)

    @property
    def size(self) -> int:
        return self.n_symbols**self.horizon

    # --- exact quantities ----------------------------------------------------

    def exact_posterior(self) -> np.ndarray:
        """The tilted target q = p·exp(R)/Z as a dense vector."""
        return self.q.copy()

    def posterior_by_trajectory(self) -> dict[tuple[str, ...], float]:
        return {self.trajectory_of(c): float(self.q[c]) for c in range(self.size)}

    def exact_lookahead_marginal(self, prefix: "Workflow | Sequence[str]") -> float:
        """Expected terminal energy of a prefix, by exact suffix enumeration."""
        texts = prefix.trajectory if isinstance(prefix, Workflow) else tuple(prefix)
        t = len(texts)
        if t > self.horizon:
            raise ValueError("prefix longer than horizon")
        code = self.encode(texts)
        if self.level_prior[t][code] == 0.0:
            raise UnreachablePrefixError(f"prefix {texts} has prior probability 0")
        return float(self.lookahead[t][code])

    def level_posterior(self, t: int) -> np.ndarray:
        """Marginal of q over length-t prefixes: p_t·L_t/Z."""
        return self.level_prior[t] * self.lookahead[t] / self.z

    def expected_prior_reward(self) -> float:
        return float(self.p @ self.r)

    def expected_posterior_reward(self) -> float:
        return float(self.q @ self.r)

    def idealized_round_mean_rewards(self) -> list[float]:
        """Mean reward of round-t completions under the exact sampler flow.

        Round t completes prefixes drawn from the level-(t-1) posterior
        marginal, so the completion law is p(c)·L_{t-1}(c_{1:t-1})/Z.
        """
        means = []
        for t in range(1, self.horizon + 1):
            block = self.n_symbols ** (self.horizon - (t - 1))
            tilt = np.repeat(self.lookahead[t - 1], block)
            law = self.p * tilt / self.z
            means.append(float(law @ self.r))
        return means

    # --- sampling -------------------------------------------------------------

    def sample_prior_codes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. trajectories from the prior, as codes (vectorized)."""
        codes = np.zeros(n, dtype=np.int64)
        for t in range(self.horizon):
            cum = np.cumsum(self.transition[t], axis=1)
            u = rng.random(n)
            chosen = (cum[codes] < u[:, None]).sum(axis=1)
            codes = codes * self.n_symbols + chosen
        return codes

    def empirical_distribution(self, codes: np.ndarray) -> np.ndarray:
        counts = np.bincount(codes, minlength=self.size).astype(float)
        return counts / counts.sum()


def tv_distance(d1: np.ndarray, d2: np.ndarray) -> float:
    """Total variation distance ½ Σ |d1 − d2| over a shared support universe."""
    a = np.asarray(d1, dtype=float)
    b = np.asarray(d2, dtype=float)
    if a.shape != b.shape:
        raise ValueError("distributions live on different support universes")
    return 0.5 * float(np.abs(a - b).sum())


def expected_reward(dist: np.ndarray, instance: ExactInstance) -> float:
    """Exact dot product of a distribution with the instance reward vector."""
    d = np.asarray(dist, dtype=float)
    if d.shape != instance.r.shape:
        raise ValueError("distribution does not match the trajectory space")
    return float(d @ instance.r)


def kl_objective(dist: np.ndarray, instance: ExactInstance) -> float:
    """Reward-minus-KL objective E_d[R] − KL(d ‖ p).

    The tilted posterior q is its unique maximizer, with optimum log Z.
    Requires d to be absolutely continuous w.r.t. the prior.
    """
    d = np.asarray(dist, dtype=float)
    if d.shape != instance.p.shape:
        raise ValueError("distribution does not match the trajectory space")
    support = d > 0
    if np.any(support & (instance.p == 0)):
        raise SupportMismatchError("distribution puts mass outside the prior support")
    kl = float(np.sum(d[support] * np.log(d[support] / instance.p[support])))
    return float(d @ instance.r) - kl


def weighted_majority_estimate(
    codes: np.ndarray, rewards: np.ndarray, size: int
) -> np.ndarray:
    """Self-normalized importance-sampling estimate of the tilted posterior.

    Given prior samples and their rewards, weights each sample by exp(R) and
    normalizes: the weighted empirical measure Σ w_i δ_{s_i}.
    """
    if len(codes) == 0:
        raise ValueError("empty sample")
    weights = np.exp(np.asarray(rewards, dtype=float))
    est = np.bincount(np.asarray(codes), weights=weights, minlength=size)
    return est / est.sum()


def log_partition(instance: ExactInstance) -> float:
    return math.log(instance.z)
