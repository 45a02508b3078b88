"""Shipped tabular instances and their serialized form.

``instance_a`` is the convergence-check workhorse: 3 symbols, horizon 3,
27 trajectories, a nonuniform context-dependent prior and rewards in
{0, 0.5, 1} keyed to how many 'a' steps a trajectory contains. The reward
gradient is visible from every prefix, so look-ahead is informative at every
level and the idealized per-round mean reward strictly increases.
"""

from __future__ import annotations

import json
from itertools import product
from pathlib import Path

import numpy as np

from .oracle import ExactInstance
from .priors import TabularPrior
from .rewards import TabularReward


def instance_a() -> ExactInstance:
    alphabet = ["a", "b", "c"]
    root = [0.20, 0.65, 0.15]
    after = {
        0: [0.75, 0.15, 0.10],  # momentum on the rewarded symbol
        1: [0.15, 0.70, 0.15],
        2: [0.20, 0.25, 0.55],
    }
    rows: dict[tuple[int, ...], list[float]] = {(): root}
    for length in (1, 2):
        for ctx in product(range(3), repeat=length):
            rows[ctx] = after[ctx[-1]]
    prior = TabularPrior(alphabet, 3, rows)
    table = {}
    for combo in product(alphabet, repeat=3):
        n_a = sum(1 for s in combo if s == "a")
        table[combo] = {3: 1.0, 2: 0.5}.get(n_a, 0.0)
    return ExactInstance(prior, TabularReward(table, default=0.0))


def four_trajectory_instance() -> ExactInstance:
    """Uniform prior over {a,b}^2 with a single rewarded trajectory.

    Closed form: q = [e, 1, 1, 1]/(e+3) with the rewarded trajectory first.
    """
    prior = TabularPrior.uniform(["a", "b"], 2)
    reward = TabularReward({("a", "a"): 1.0}, default=0.0)
    return ExactInstance(prior, reward)


def two_symbol_flat_instance(horizon: int = 3) -> ExactInstance:
    """Uniform 2-symbol prior with zero reward everywhere (q = p)."""
    prior = TabularPrior.uniform(["a", "b"], horizon)
    return ExactInstance(prior, TabularReward({}, default=0.0))


# --- serialization -----------------------------------------------------------

def save_reward(reward: TabularReward, path: "str | Path") -> None:
    doc = {
        "default": reward.default,
        "rewards": {
            ",".join(traj): value for traj, value in sorted(reward.table.items())
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2))


def load_reward(path: "str | Path") -> TabularReward:
    doc = json.loads(Path(path).read_text())
    table = {
        tuple(key.split(",")): float(value)
        for key, value in doc.get("rewards", {}).items()
    }
    return TabularReward(table, default=float(doc.get("default", 0.0)))


def save_instance(instance: ExactInstance, prior_path, reward_path) -> None:
    instance.prior.to_json(prior_path)
    save_reward(instance.reward_model, reward_path)


def load_instance(prior_path, reward_path) -> ExactInstance:
    return ExactInstance(TabularPrior.from_json(prior_path), load_reward(reward_path))


def posterior_csv(instance: ExactInstance) -> str:
    """Oracle posterior as CSV for inspection: trajectory, p, reward, q."""
    lines = ["trajectory,prior,reward,posterior"]
    for code in range(instance.size):
        traj = "|".join(instance.trajectory_of(code))
        lines.append(
            f"{traj},{instance.p[code]:.12g},{instance.r[code]:.12g},{instance.q[code]:.12g}"
        )
    return "\n".join(lines) + "\n"
