import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from swsbp.chain import (
    AggregateObservation,
    ChainGraph,
    EdgePotential,
    NodePotential,
    StateSpace,
    build_hmm_chain,
    obs,
)
from swsbp.engine import (
    bethe_free_energy,
    edge_marginal,
    node_marginal,
    run_sbp,
    uniform_messages,
    update_hidden_message,
    update_observed_message,
)
from swsbp.errors import StructureError, ValidationError
from swsbp.estimates import MarginalEstimate
from swsbp.oracle import brute_force_marginals, forward_backward, joint_tensor


def pair_graph(table, constrained_first=True):
    return ChainGraph(
        first_time=1,
        num_hidden=2,
        hidden_space=StateSpace(len(table)),
        obs_space=None,
        transitions={1: EdgePotential(table)},
        emissions={},
        observed=frozenset({1} if constrained_first else set()),
    )


def mixed_graph():
    """Three hidden nodes, a leaf at every time, pins on obs(1), 2, obs(3)."""
    return ChainGraph(
        first_time=1,
        num_hidden=3,
        hidden_space=StateSpace(2),
        obs_space=StateSpace(2),
        transitions={
            1: EdgePotential([[0.7, 0.3], [0.4, 0.6]]),
            2: EdgePotential([[0.9, 0.1], [0.2, 0.8]]),
        },
        emissions={t: EdgePotential([[0.8, 0.2], [0.3, 0.7]]) for t in (1, 2, 3)},
        observed=frozenset({obs(1), 2, obs(3)}),
        node_potentials={1: NodePotential([0.6, 0.4])},
    )


def mixed_observations():
    return {
        obs(1): AggregateObservation([0.5, 0.5], 100),
        2: AggregateObservation([0.25, 0.75], 100),
        obs(3): AggregateObservation([0.1, 0.9], 100),
    }


class TestMessageUpdates:
    def test_hidden_message_by_hand(self):
        # psi^T @ [0.5, 0.5] = [1.5, 2.0], normalized to [3/7, 4/7]
        graph = pair_graph([[2.0, 1.0], [1.0, 3.0]], constrained_first=False)
        store = uniform_messages(graph)
        msg = update_hidden_message(graph, store, 1, 2)
        assert_allclose(msg, [3 / 7, 4 / 7], atol=1e-15)

    def test_hidden_message_leaves_store_alone(self):
        graph = pair_graph([[2.0, 1.0], [1.0, 3.0]], constrained_first=False)
        store = uniform_messages(graph)
        before = {k: v.copy() for k, v in store.items()}
        update_hidden_message(graph, store, 2, 1)
        for key, val in before.items():
            assert_allclose(store[key], val)

    def test_scaled_message_by_hand(self):
        # y / incoming = [1.6, 0.4]; psi^T @ that = [2.8, 4.8] -> [7/19, 12/19]
        graph = pair_graph([[1.0, 2.0], [3.0, 4.0]])
        store = uniform_messages(graph)
        y = AggregateObservation([0.8, 0.2], 10)
        msg = update_observed_message(graph, store, 1, y, 2)
        assert_allclose(msg, [7 / 19, 12 / 19], atol=1e-15)

    def test_scaled_message_identity_returns_pin(self):
        graph = pair_graph([[1.0, 0.0], [0.0, 1.0]])
        store = uniform_messages(graph)
        y = AggregateObservation([0.8, 0.2], 10)
        msg = update_observed_message(graph, store, 1, y, 2)
        assert_allclose(msg, [0.8, 0.2], atol=1e-15)

    def test_scaled_message_wrong_length(self):
        graph = pair_graph([[1.0, 2.0], [3.0, 4.0]])
        store = uniform_messages(graph)
        y = AggregateObservation([0.2, 0.3, 0.5], 10)
        with pytest.raises(ValidationError):
            update_observed_message(graph, store, 1, y, 2)

    def test_missing_incoming_message(self):
        graph = ChainGraph(
            first_time=1,
            num_hidden=3,
            hidden_space=StateSpace(2),
            obs_space=None,
            transitions={t: EdgePotential([[1.0, 2.0], [3.0, 4.0]]) for t in (1, 2)},
            emissions={},
            observed=frozenset(),
        )
        with pytest.raises(ValidationError):
            update_hidden_message(graph, {}, 2, 3)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    def test_hidden_message_is_a_distribution(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 5))
        graph = ChainGraph(
            first_time=1,
            num_hidden=2,
            hidden_space=StateSpace(d),
            obs_space=None,
            transitions={1: EdgePotential(rng.uniform(0.1, 2.0, (d, d)))},
            emissions={},
            observed=frozenset(),
        )
        store = {(2, 1): rng.uniform(0.1, 1.0, d)}
        msg = update_hidden_message(graph, store, 1, 2)
        assert np.all(msg >= 0)
        assert_allclose(msg.sum(), 1.0, atol=1e-12)


class TestNodeMarginal:
    def test_product_of_incoming(self):
        store = {
            ("a", 1): np.array([0.4, 0.6]),
            ("b", 1): np.array([0.5, 0.5]),
            (1, "a"): np.array([9.0, 9.0]),
        }
        assert_allclose(node_marginal(store, 1), [0.4, 0.6], atol=1e-15)

    def test_no_incoming_messages(self):
        with pytest.raises(StructureError):
            node_marginal({(1, 2): np.array([0.5, 0.5])}, 3)


class TestEdgeMarginal:
    def test_uniform_messages_give_normalized_potential(self):
        table = np.array([[0.4, 0.1], [0.2, 0.3]])
        graph = pair_graph(table, constrained_first=False)
        store = uniform_messages(graph)
        assert_allclose(edge_marginal(graph, store, 1, 2), table, atol=1e-15)

    def test_orientation_transpose(self):
        table = np.array([[0.4, 0.1], [0.2, 0.3]])
        graph = pair_graph(table, constrained_first=False)
        store = uniform_messages(graph)
        forward = edge_marginal(graph, store, 1, 2)
        backward = edge_marginal(graph, store, 2, 1)
        assert_allclose(backward, forward.T, atol=1e-15)

    def test_pinned_endpoint_uses_observation(self):
        # row scaling of [[0.4, 0.1], [0.2, 0.3]] onto row sums [0.8, 0.2]
        graph = pair_graph([[0.4, 0.1], [0.2, 0.3]])
        store = uniform_messages(graph)
        y = {1: AggregateObservation([0.8, 0.2], 10)}
        table = edge_marginal(graph, store, 1, 2, observations=y)
        assert_allclose(table, [[0.64, 0.16], [0.08, 0.12]], atol=1e-12)


class TestRunSbp:
    def test_single_pin_row_scaling(self):
        graph = pair_graph([[0.4, 0.1], [0.2, 0.3]])
        y = {1: AggregateObservation([0.8, 0.2], 10)}
        result = run_sbp(graph, y, tolerance=1e-12)
        assert result.diagnostics.converged
        assert_allclose(result.marginals.node(1), [0.8, 0.2], atol=1e-12)
        assert_allclose(result.marginals.node(2), [0.72, 0.28], atol=1e-12)
        assert_allclose(
            result.marginals.edge(1, 2),
            [[0.64, 0.16], [0.08, 0.12]],
            atol=1e-12,
        )

    def test_mixed_pins_match_scaling_route(self):
        # values from the joint-tensor scaling route at tolerance 1e-15
        result = run_sbp(mixed_graph(), mixed_observations(), tolerance=1e-13)
        assert result.diagnostics.converged
        assert_allclose(
            result.marginals.node(1),
            [0.47787765404740995, 0.5221223459525899],
            atol=1e-10,
        )
        assert_allclose(
            result.marginals.node(3),
            [0.2581638320355641, 0.7418361679644357],
            atol=1e-10,
        )
        assert_allclose(
            result.marginals.edge(1, 2),
            [[0.17564792871641938, 0.3022297253309906],
             [0.07435207128358051, 0.4477702746690095]],
            atol=1e-10,
        )

    def test_pins_hold_and_marginals_consistent(self):
        graph = mixed_graph()
        observations = mixed_observations()
        result = run_sbp(graph, observations, tolerance=1e-9)
        assert result.diagnostics.converged
        for node, y in observations.items():
            assert_allclose(result.marginals.node(node), y.distribution, atol=1e-8)
        assert result.marginals.max_consistency_gap() <= 1e-8

    def test_covers_every_node_and_edge(self):
        graph = mixed_graph()
        result = run_sbp(graph, mixed_observations())
        assert set(result.marginals.nodes) == set(graph.nodes())
        assert set(result.marginals.edges) == set(graph.edges())

    def test_dirac_observations_match_filtering(self):
        rng = np.random.default_rng(42)
        d, T = 3, 6
        prior = rng.dirichlet(np.ones(d))
        transition = rng.dirichlet(np.ones(d), size=d)
        observation = rng.dirichlet(np.ones(d), size=d)
        symbols = rng.integers(0, d, size=T)
        graph = build_hmm_chain(prior, transition, observation, T)
        y = {
            obs(t): AggregateObservation.dirac(int(symbols[t - 1]), d, 1)
            for t in range(1, T + 1)
        }
        result = run_sbp(graph, y, tolerance=1e-12)
        expected = forward_backward(prior, transition, observation, symbols)
        for t in range(1, T + 1):
            assert_allclose(result.marginals.node(t), expected[t - 1], atol=1e-10)

    def test_unconstrained_graph_is_exact_without_sweeps(self):
        rng = np.random.default_rng(3)
        graph = ChainGraph(
            first_time=1,
            num_hidden=3,
            hidden_space=StateSpace(2),
            obs_space=StateSpace(2),
            transitions={t: EdgePotential(rng.uniform(0.2, 1.0, (2, 2))) for t in (1, 2)},
            emissions={t: EdgePotential(rng.uniform(0.2, 1.0, (2, 2))) for t in (1, 3)},
            observed=frozenset(),
        )
        result = run_sbp(graph, {})
        assert result.diagnostics.converged
        assert result.diagnostics.sweeps == 0
        reference = brute_force_marginals(graph)
        for node in graph.nodes():
            assert_allclose(result.marginals.node(node), reference.node(node), atol=1e-12)
        for i, j in graph.edges():
            assert_allclose(result.marginals.edge(i, j), reference.edge(i, j), atol=1e-12)

    def test_budget_exhaustion_reports_not_converged(self):
        result = run_sbp(mixed_graph(), mixed_observations(), tolerance=1e-13, max_sweeps=1)
        assert not result.diagnostics.converged
        assert result.diagnostics.sweeps == 1
        assert result.diagnostics.residual > 1e-13

    def test_deterministic_across_runs(self):
        first = run_sbp(mixed_graph(), mixed_observations())
        second = run_sbp(mixed_graph(), mixed_observations())
        assert first.diagnostics.sweeps == second.diagnostics.sweeps
        for node in first.marginals.nodes:
            assert np.array_equal(first.marginals.node(node), second.marginals.node(node))
        for i, j in first.marginals.edges:
            assert np.array_equal(first.marginals.edge(i, j), second.marginals.edge(i, j))

    def test_warm_start_from_fixed_point_is_cheap(self):
        graph = mixed_graph()
        observations = mixed_observations()
        cold = run_sbp(graph, observations, tolerance=1e-11)
        warm = run_sbp(graph, observations, tolerance=1e-11, warm_start=cold.store)
        assert warm.diagnostics.converged
        assert warm.diagnostics.sweeps <= cold.diagnostics.sweeps
        for node in cold.marginals.nodes:
            assert_allclose(
                warm.marginals.node(node), cold.marginals.node(node), atol=1e-9
            )

    def test_store_keys_are_directed_edges(self):
        graph = mixed_graph()
        result = run_sbp(graph, mixed_observations())
        expected = set()
        for i, j in graph.edges():
            expected.add((i, j))
            expected.add((j, i))
        assert set(result.store) == expected

    def test_missing_observation_rejected(self):
        with pytest.raises(ValidationError):
            run_sbp(mixed_graph(), {2: AggregateObservation([0.25, 0.75], 100)})

    def test_unexpected_observation_rejected(self):
        y = dict(mixed_observations())
        y[3] = AggregateObservation([0.5, 0.5], 100)
        with pytest.raises(ValidationError):
            run_sbp(mixed_graph(), y)

    def test_wrong_length_observation_rejected(self):
        y = dict(mixed_observations())
        y[2] = AggregateObservation([0.2, 0.3, 0.5], 100)
        with pytest.raises(ValidationError):
            run_sbp(mixed_graph(), y)

    def test_plain_array_observation_rejected(self):
        y = dict(mixed_observations())
        y[2] = np.array([0.25, 0.75])
        with pytest.raises(ValidationError):
            run_sbp(mixed_graph(), y)

    def test_bad_controls_rejected(self):
        with pytest.raises(ValidationError):
            run_sbp(mixed_graph(), mixed_observations(), tolerance=-1.0)
        with pytest.raises(ValidationError):
            run_sbp(mixed_graph(), mixed_observations(), max_sweeps=0)


class TestBetheFreeEnergy:
    def test_unconstrained_value_is_log_mass(self):
        rng = np.random.default_rng(11)
        graph = ChainGraph(
            first_time=1,
            num_hidden=3,
            hidden_space=StateSpace(2),
            obs_space=StateSpace(2),
            transitions={t: EdgePotential(rng.uniform(0.2, 1.0, (2, 2))) for t in (1, 2)},
            emissions={2: EdgePotential(rng.uniform(0.2, 1.0, (2, 2)))},
            observed=frozenset(),
        )
        result = run_sbp(graph, {})
        mass = joint_tensor(graph).sum()
        assert_allclose(bethe_free_energy(graph, result.marginals), -math.log(mass), atol=1e-12)

    def test_single_pin_closed_form(self):
        # KL of the row-scaled table against [[0.4, 0.1], [0.2, 0.3]]
        graph = pair_graph([[0.4, 0.1], [0.2, 0.3]])
        y = {1: AggregateObservation([0.8, 0.2], 10)}
        result = run_sbp(graph, y, tolerance=1e-12)
        value = bethe_free_energy(graph, result.marginals)
        assert_allclose(value, 0.19274475702175742, atol=1e-12)

    def test_mixed_pins_match_scaling_route_objective(self):
        result = run_sbp(mixed_graph(), mixed_observations(), tolerance=1e-13)
        value = bethe_free_energy(mixed_graph(), result.marginals)
        assert_allclose(value, 0.61539833916872999, atol=1e-9)

    def test_inconsistent_estimate_rejected(self):
        graph = pair_graph([[0.4, 0.1], [0.2, 0.3]], constrained_first=False)
        estimate = MarginalEstimate(
            nodes={1: np.array([0.3, 0.7]), 2: np.array([0.5, 0.5])},
            edges={(1, 2): np.full((2, 2), 0.25)},
        )
        with pytest.raises(ValidationError):
            bethe_free_energy(graph, estimate)

    def test_missing_edge_rejected(self):
        graph = pair_graph([[0.4, 0.1], [0.2, 0.3]], constrained_first=False)
        estimate = MarginalEstimate(
            nodes={1: np.array([0.5, 0.5]), 2: np.array([0.5, 0.5])},
            edges={},
        )
        with pytest.raises(ValidationError):
            bethe_free_energy(graph, estimate)

    def test_belief_off_support_is_infinite(self):
        graph = pair_graph([[1.0, 0.0], [1.0, 1.0]], constrained_first=False)
        estimate = MarginalEstimate(
            nodes={1: np.array([0.5, 0.5]), 2: np.array([0.5, 0.5])},
            edges={(1, 2): np.full((2, 2), 0.25)},
        )
        assert math.isinf(bethe_free_energy(graph, estimate))
