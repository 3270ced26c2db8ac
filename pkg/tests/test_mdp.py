import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drex.errors import EmptyDatasetError, InvalidTrajectoryError, MdpValidationError
from drex.mdp import (
    Mdp,
    Trajectory,
    dataset_return,
    mdp_from_json,
    mdp_to_json,
    policy_feature_expectations,
    policy_return,
    rollout,
    state_occupancy,
    trajectory_feature_counts,
    trajectory_return,
)
from drex.policy import Policy
from drex.solvers import iterative_policy_evaluation

from conftest import chain_mdp, random_mdp


class TestMdpValidation:
    def test_weights_normalised_and_scale_recorded(self):
        m = chain_mdp()
        big = m.with_reward([3.0, -1.0, 0.0])
        assert np.isclose(np.abs(big.true_weights).sum(), 1.0)
        assert np.isclose(big.weight_scale, 4.0)
        assert np.allclose(big.to_dict()["true_weights"], [3.0, -1.0, 0.0])

    def test_bad_row(self):
        m = chain_mdp()
        P = m.transitions.copy()
        P[1, 0, 0] += 0.1
        with pytest.raises(MdpValidationError, match=r"s=1, a=0"):
            Mdp(P, m.features, m.true_weights, 0.9, m.initial_distribution)

    @pytest.mark.parametrize("gamma", [-0.1, 1.0, 1.5])
    def test_discount_range(self, gamma):
        m = chain_mdp()
        with pytest.raises(MdpValidationError):
            Mdp(m.transitions, m.features, m.true_weights, gamma, m.initial_distribution)

    def test_feature_dimension_mismatch(self):
        m = chain_mdp()
        with pytest.raises(MdpValidationError, match="true_weights"):
            Mdp(m.transitions, m.features, np.ones(2), 0.9, m.initial_distribution)


class TestJson:
    def test_roundtrip(self, chain):
        back = mdp_from_json(mdp_to_json(chain))
        assert np.array_equal(back.transitions, chain.transitions)
        assert np.allclose(back.true_weights, chain.true_weights)

    def test_line_of_bad_field(self, chain):
        data = chain.to_dict()
        data["initial_distribution"] = [0.7, 0.7, 0.0]
        text = json.dumps(data, indent=1)
        with pytest.raises(MdpValidationError) as info:
            mdp_from_json(text)
        line = next(i for i, l in enumerate(text.splitlines(), 1) if '"initial_distribution"' in l)
        assert info.value.line == line
        assert str(info.value).startswith(f"line {line}:")

    def test_missing_field(self, chain):
        data = chain.to_dict()
        del data["gamma"]
        with pytest.raises(MdpValidationError, match="gamma"):
            mdp_from_json(json.dumps(data))

    def test_malformed(self):
        with pytest.raises(MdpValidationError, match="line 2"):
            mdp_from_json('{\n  "n_states": ,\n}')

    def test_wrong_transition_size(self, chain):
        data = chain.to_dict()
        data["transitions"] = data["transitions"][:-1]
        with pytest.raises(MdpValidationError, match="entries"):
            mdp_from_json(json.dumps(data))


class TestReturns:
    def test_trajectory_return_by_hand(self):
        t = Trajectory([0, 1, 2], [0, 0, 0])
        r = np.array([1.0, 2.0, 4.0])
        assert trajectory_return(t, r, 0.5) == pytest.approx(1 + 1 + 1)
        assert trajectory_return(t, lambda s: r[s], 0.5) == pytest.approx(3.0)

    def test_out_of_range_state(self):
        with pytest.raises(InvalidTrajectoryError):
            trajectory_return(Trajectory([0, 5], [0, 0]), np.zeros(3), 0.9)

    def test_empty_dataset(self):
        with pytest.raises(EmptyDatasetError):
            dataset_return([], np.zeros(3), 0.9)

    def test_empty_trajectory(self):
        with pytest.raises(InvalidTrajectoryError):
            Trajectory([], [])

    def test_serialisation(self):
        t = Trajectory([0, 2, 1], [1, 0, 1], 0.25, 7)
        back = Trajectory.from_dict(json.loads(json.dumps(t.to_dict())))
        assert back.steps == t.steps and back.noise_level == 0.25 and back.seed == 7

    def test_validate_against_mdp(self, chain):
        with pytest.raises(InvalidTrajectoryError):
            Trajectory([0, 1], [0, 2]).validate(chain)

    def test_returns_linear_in_feature_counts(self, rng):
        m = random_mdp(rng)
        t = rollout(m, Policy.uniform(4, 3), 1, rng, horizon=12)[0]
        phi = trajectory_feature_counts(t, m.features, m.discount)
        assert m.true_weights @ phi == pytest.approx(trajectory_return(t, m.true_reward(), m.discount))


class TestPolicyEvaluation:
    def test_linear_solve_matches_iterative_oracle(self, rng):
        for _ in range(5):
            m = random_mdp(rng)
            pi = Policy(rng.dirichlet(np.ones(3), size=4))
            V = iterative_policy_evaluation(m, pi)
            assert policy_return(m, pi) == pytest.approx(m.initial_distribution @ V, abs=1e-9)

    def test_finite_horizon_is_truncated_sum(self, chain):
        pi = Policy.uniform(3, 2)
        by_hand = 0.0
        dist = chain.initial_distribution
        P = np.einsum("sa,sat->st", pi.probs, chain.transitions)
        for t in range(5):
            by_hand += 0.9**t * dist @ chain.true_reward()
            dist = dist @ P
        assert policy_return(chain, pi, horizon=5) == pytest.approx(by_hand)

    def test_finite_horizon_undiscounted(self, chain):
        occ = state_occupancy(chain, Policy.uniform(3, 2), horizon=7, discount=1.0)
        assert occ.sum() == pytest.approx(7.0)

    def test_infinite_needs_discount_below_one(self, chain):
        with pytest.raises(ValueError):
            state_occupancy(chain, Policy.uniform(3, 2), discount=1.0)

    def test_feature_expectations_monte_carlo_oracle(self):
        """1e6 rollouts on the chain agree with the exact finite-horizon feature expectations (3 SE)."""
        m = chain_mdp(horizon=8)
        pi = Policy(np.array([[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]]))
        exact = policy_feature_expectations(pi, m, horizon=8)
        n = 1_000_000
        trajs_states = np.stack([t.states for t in rollout(m, pi, n, np.random.default_rng(0))])
        disc = 0.9 ** np.arange(8)
        samples = np.stack([(disc * (trajs_states == s)).sum(axis=1) for s in range(3)], axis=1)
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mean - exact) <= 3 * se)


class TestRollout:
    def test_deterministic_given_seed(self, chain):
        a = rollout(chain, Policy.uniform(3, 2), 5, np.random.default_rng(3), horizon=10)
        b = rollout(chain, Policy.uniform(3, 2), 5, np.random.default_rng(3), horizon=10)
        assert all(x.steps == y.steps for x, y in zip(a, b))

    def test_needs_horizon(self, chain):
        with pytest.raises(ValueError):
            rollout(chain, Policy.uniform(3, 2), 1, np.random.default_rng(0))

    def test_follows_support(self, chain, rng):
        for t in rollout(chain, Policy.uniform(3, 2), 50, rng, horizon=15):
            for (s, a), s2 in zip(t.steps, t.states[1:]):
                assert chain.transitions[s, a, s2] > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.95))
def test_feature_expectations_give_returns(seed, gamma):
    """J = w . Phi for any policy (property)."""
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, discount=gamma)
    pi = Policy(rng.dirichlet(np.ones(3), size=4))
    assert m.true_weights @ policy_feature_expectations(pi, m) == pytest.approx(policy_return(m, pi), abs=1e-9)
