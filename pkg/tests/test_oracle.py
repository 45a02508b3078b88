"""Enumeration oracle: exact posterior, look-ahead marginals, objectives."""

import math

import numpy as np
import pytest

from flowsmc.errors import (
    InstanceTooLargeError,
    SupportMismatchError,
    UnreachablePrefixError,
)
from flowsmc.instances import (
    four_trajectory_instance,
    instance_a,
    two_symbol_flat_instance,
)
from flowsmc.oracle import (
    ExactInstance,
    expected_reward,
    kl_objective,
    tv_distance,
    weighted_majority_estimate,
)
from flowsmc.priors import TabularPrior
from flowsmc.rewards import TabularReward
from flowsmc.workflows import Workflow

E = math.e


def random_instance(rng, n_symbols=3, horizon=3) -> ExactInstance:
    alphabet = [f"s{i}" for i in range(n_symbols)]
    rows = {}
    from itertools import product

    for length in range(horizon):
        for ctx in product(range(n_symbols), repeat=length):
            row = rng.dirichlet(np.ones(n_symbols))
            rows[ctx] = row
    table = {}
    for combo in product(alphabet, repeat=horizon):
        table[combo] = float(rng.choice([0.0, 0.5, 1.0]))
    return ExactInstance(
        TabularPrior(alphabet, horizon, rows), TabularReward(table, 0.0)
    )


class TestExactPosterior:
    def test_zero_reward_collapses_to_prior(self):
        inst = two_symbol_flat_instance()
        assert np.allclose(inst.exact_posterior(), inst.p, atol=1e-15)

    def test_four_trajectory_closed_form(self):
        inst = four_trajectory_instance()
        expected = np.array([E, 1.0, 1.0, 1.0]) / (E + 3.0)
        assert np.allclose(inst.exact_posterior(), expected, atol=1e-9)

    def test_point_mass_prior_ignores_reward(self):
        prior = TabularPrior(
            ["a", "b"], 2, {(): [1.0, 0.0], (0,): [0.0, 1.0], (1,): [0.5, 0.5]}
        )
        reward = TabularReward({("a", "b"): 1.0}, 0.0)
        inst = ExactInstance(prior, reward)
        assert np.allclose(inst.exact_posterior(), inst.p, atol=1e-15)

    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            inst = random_instance(rng)
            assert abs(inst.exact_posterior().sum() - 1.0) < 1e-12
            assert abs(inst.p.sum() - 1.0) < 1e-12

    def test_size_cap(self):
        prior = TabularPrior.uniform([f"s{i}" for i in range(12)], 7)
        with pytest.raises(InstanceTooLargeError):
            ExactInstance(prior, TabularReward({}, 0.0))


class TestLookaheadMarginal:
    def test_full_trajectory_is_energy(self):
        inst = instance_a()
        for code in range(0, inst.size, 5):
            traj = inst.trajectory_of(code)
            assert inst.exact_lookahead_marginal(traj) == pytest.approx(
                math.exp(inst.r[code]), abs=1e-12
            )

    def test_zero_reward_gives_one(self):
        inst = two_symbol_flat_instance()
        for prefix in [(), ("a",), ("a", "b"), ("b", "b", "a")]:
            assert inst.exact_lookahead_marginal(prefix) == pytest.approx(1.0, abs=1e-12)

    def test_two_term_closed_form(self):
        prior = TabularPrior(
            ["a", "b"], 2, {(): [1.0, 0.0], (0,): [0.5, 0.5], (1,): [0.5, 0.5]}
        )
        reward = TabularReward({("a", "a"): 1.0, ("a", "b"): 0.0}, 0.0)
        inst = ExactInstance(prior, reward)
        assert inst.exact_lookahead_marginal(("a",)) == pytest.approx(
            0.5 * E + 0.5, abs=1e-12
        )

    def test_accepts_workflow_objects(self):
        inst = instance_a()
        w = Workflow.prefix(["a"], 3)
        assert inst.exact_lookahead_marginal(w) == inst.exact_lookahead_marginal(("a",))

    def test_unreachable_prefix(self):
        prior = TabularPrior(
            ["a", "b"], 2, {(): [1.0, 0.0], (0,): [0.5, 0.5], (1,): [0.5, 0.5]}
        )
        inst = ExactInstance(prior, TabularReward({}, 0.0))
        with pytest.raises(UnreachablePrefixError):
            inst.exact_lookahead_marginal(("b",))

    def test_tower_property(self):
        rng = np.random.default_rng(11)
        for inst in [instance_a(), four_trajectory_instance(), random_instance(rng)]:
            for t in range(inst.horizon + 1):
                total = float(np.dot(inst.level_prior[t], inst.lookahead[t]))
                assert total == pytest.approx(inst.z, abs=1e-12)


class TestTvDistance:
    def test_identical(self):
        d = np.array([0.3, 0.7])
        assert tv_distance(d, d) == 0.0

    def test_disjoint_point_masses(self):
        assert tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_quarter(self):
        assert tv_distance(np.array([0.5, 0.5]), np.array([0.75, 0.25])) == pytest.approx(0.25)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            tv_distance(np.array([1.0]), np.array([0.5, 0.5]))


class TestExpectedReward:
    def test_point_mass_on_rewarded(self):
        inst = four_trajectory_instance()
        dist = np.zeros(4)
        dist[inst.encode(("a", "a"))] = 1.0
        assert expected_reward(dist, inst) == 1.0

    def test_uniform_over_binary_rewards(self):
        prior = TabularPrior.uniform(["a", "b"], 1)
        inst = ExactInstance(prior, TabularReward({("a",): 1.0, ("b",): 0.0}, 0.0))
        assert expected_reward(np.array([0.5, 0.5]), inst) == 0.5

    def test_posterior_reward_closed_form(self):
        inst = four_trajectory_instance()
        assert expected_reward(inst.exact_posterior(), inst) == pytest.approx(
            E / (E + 3.0), abs=1e-9
        )


class TestKlObjective:
    def test_posterior_attains_log_partition(self):
        for inst in [four_trajectory_instance(), instance_a()]:
            assert kl_objective(inst.exact_posterior(), inst) == pytest.approx(
                math.log(inst.z), abs=1e-12
            )

    def test_prior_attains_expected_reward(self):
        inst = four_trajectory_instance()
        assert kl_objective(inst.p, inst) == pytest.approx(
            inst.expected_prior_reward(), abs=1e-12
        )

    def test_posterior_dominates_simplex_grid(self):
        inst = four_trajectory_instance()
        best = kl_objective(inst.exact_posterior(), inst)
        rng = np.random.default_rng(5)
        for _ in range(1000):
            q_prime = rng.dirichlet(np.ones(inst.size))
            assert kl_objective(q_prime, inst) <= best + 1e-12

    def test_support_mismatch(self):
        prior = TabularPrior(
            ["a", "b"], 1, {(): [1.0, 0.0]}
        )
        inst = ExactInstance(prior, TabularReward({}, 0.0))
        with pytest.raises(SupportMismatchError):
            kl_objective(np.array([0.5, 0.5]), inst)


class TestWeightedMajorityEstimate:
    def test_identical_samples_point_mass(self):
        inst = four_trajectory_instance()
        codes = np.zeros(50, dtype=int)
        est = weighted_majority_estimate(codes, inst.r[codes], inst.size)
        assert est[0] == 1.0
        assert est.sum() == pytest.approx(1.0)

    def test_zero_reward_is_plain_empirical(self):
        inst = two_symbol_flat_instance(horizon=2)
        rng = np.random.default_rng(0)
        codes = inst.sample_prior_codes(5000, rng)
        est = weighted_majority_estimate(codes, np.zeros(len(codes)), inst.size)
        assert np.allclose(est, inst.empirical_distribution(codes), atol=1e-15)

    def test_converges_to_posterior(self):
        inst = four_trajectory_instance()
        rng = np.random.default_rng(42)
        codes = inst.sample_prior_codes(100_000, rng)
        est = weighted_majority_estimate(codes, inst.r[codes], inst.size)
        assert tv_distance(est, inst.exact_posterior()) < 0.01

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            weighted_majority_estimate(np.array([], dtype=int), np.array([]), 4)


class TestInstanceFlow:
    def test_level_posterior_is_q_marginal(self):
        inst = instance_a()
        q = inst.exact_posterior()
        for t in range(inst.horizon + 1):
            block = inst.n_symbols ** (inst.horizon - t)
            marginal = q.reshape(-1, block).sum(axis=1)
            assert np.allclose(inst.level_posterior(t), marginal, atol=1e-12)

    def test_idealized_round_means_bracketed_by_prior_and_posterior(self):
        inst = instance_a()
        means = inst.idealized_round_mean_rewards()
        assert means[0] == pytest.approx(inst.expected_prior_reward(), abs=1e-12)
        assert all(means[i] < means[i + 1] for i in range(len(means) - 1))

    def test_prior_sampler_matches_exact_prior(self):
        inst = instance_a()
        rng = np.random.default_rng(9)
        codes = inst.sample_prior_codes(100_000, rng)
        emp = inst.empirical_distribution(codes)
        assert tv_distance(emp, inst.p) < 0.01
