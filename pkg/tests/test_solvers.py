import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drex.envs import lava_gridworld, make_env, prop1_mdp, terrain_gridworld
from drex.errors import ConvergenceError
from drex.mdp import policy_return
from drex.policy import Policy
from drex.reward import RewardModel
from drex.solvers import (
    PolicyQualityWarning,
    QLearningConfig,
    enumerate_deterministic_policies,
    finite_horizon_q,
    greedy_actions,
    optimize_on_learned_reward,
    q_learning,
    sigmoid_normalize,
    truncated_value_iteration,
    value_iteration,
)

from conftest import chain_mdp, random_mdp


class TestPolicy:
    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValueError, match="rows"):
            Policy(np.array([[0.5, 0.4]]))

    def test_negative(self):
        with pytest.raises(ValueError):
            Policy(np.array([[1.5, -0.5]]))

    def test_greedy_lowest_index(self):
        assert Policy(np.array([[0.4, 0.4, 0.2]])).greedy_actions().tolist() == [0]

    def test_roundtrip(self):
        p = Policy.deterministic([1, 0], 3, "learned")
        back = Policy.from_dict(p.to_dict())
        assert np.array_equal(back.probs, p.probs) and back.provenance == "learned" and back.is_deterministic()


class TestValueIteration:
    def test_matches_enumeration(self, rng):
        """The VI policy attains the best exact return among all deterministic policies."""
        for _ in range(5):
            m = random_mdp(rng, S=4, A=3)
            _, pi = value_iteration(m)
            best = max(policy_return(m, p) for p in enumerate_deterministic_policies(m))
            assert policy_return(m, pi) == pytest.approx(best, abs=1e-8)

    def test_residual_within_tolerance(self, chain):
        vf, _ = value_iteration(chain, tol=1e-8)
        assert vf.residual < 1e-8

    def test_convergence_error(self, chain):
        with pytest.raises(ConvergenceError) as info:
            value_iteration(chain, tol=1e-12, max_iters=3)
        assert info.value.residual > 0

    def test_flat_reward_picks_lowest_index(self):
        m = terrain_gridworld()
        _, pi = value_iteration(m, np.ones(m.n_states))
        assert np.all(pi.greedy_actions() == 0)

    def test_near_ties(self):
        Q = np.array([[1.0, 1.0 + 1e-14, 0.5], [0.0, 2.0, 2.0]])
        assert greedy_actions(Q).tolist() == [0, 1]

    def test_prop1_expert_plays_a(self):
        _, pi = value_iteration(prop1_mdp())
        assert pi.greedy_actions()[0] == 0

    @pytest.mark.parametrize("name", ["terrain", "lava", "prop1"])
    def test_builtin_separation(self, name):
        m = make_env(name)
        _, pi = value_iteration(m)
        j_opt = policy_return(m, pi, horizon=m.horizon)
        j_rand = policy_return(m, Policy.uniform(m.n_states, m.n_actions), horizon=m.horizon)
        assert j_opt - j_rand > 1.0


class TestFiniteHorizon:
    def test_brute_force(self):
        """Backward recursion equals the best open-loop-free value found by enumerating policies per step."""
        m = chain_mdp(horizon=3)
        Q = finite_horizon_q(m, 3)
        r = m.true_reward()
        best = -np.inf
        # non-stationary deterministic policies: one action per (t, s), last step irrelevant
        for acts in itertools.product(range(2), repeat=6):
            pol = np.array(acts).reshape(2, 3)
            dist, total = m.initial_distribution.copy(), 0.0
            for t in range(3):
                total += 0.9**t * dist @ r
                if t < 2:
                    P = m.transitions[np.arange(3), pol[t]]
                    dist = dist @ P
            best = max(best, total)
        assert m.initial_distribution @ Q[0].max(axis=1) == pytest.approx(best)

    def test_truncated_zero_iterations(self, chain):
        vf = truncated_value_iteration(chain, 0)
        assert np.allclose(vf.Q, chain.true_reward()[:, None])

    def test_truncated_converges_to_vi(self, chain):
        assert np.allclose(truncated_value_iteration(chain, 400).V, value_iteration(chain)[0].V, atol=1e-8)


class TestLearnedReward:
    def test_exact_vi_on_true_weights_is_optimal(self):
        m = lava_gridworld()
        pi = optimize_on_learned_reward(m, RewardModel.linear(m.true_weights))
        assert pi.provenance == "learned"
        assert policy_return(m, pi) == pytest.approx(policy_return(m, value_iteration(m)[1]))

    def test_sigmoid_is_monotone(self):
        x = np.linspace(-5, 5, 11)
        y = sigmoid_normalize(x)
        assert np.all(np.diff(y) > 0) and np.all((y > 0) & (y < 1))

    def test_q_learning_reaches_optimum_on_chain(self):
        m = chain_mdp(horizon=20)
        Q, pi = q_learning(m, m.true_reward(), QLearningConfig(episodes=2000), np.random.default_rng(0))
        assert policy_return(m, pi) >= policy_return(m, value_iteration(m)[1]) - 1e-6

    def test_q_learning_default_sigmoid_and_gate(self):
        m = lava_gridworld()
        with warnings.catch_warnings():
            warnings.simplefilter("error", PolicyQualityWarning)
            pi = optimize_on_learned_reward(m, RewardModel.linear(m.true_weights), "q-learning", seed=1)
        assert pi.info["sigmoid"] is True
        assert pi.info["quality"] >= 0.9 and not pi.info["below_quality_gate"]

    def test_quality_gate_warns(self):
        m = terrain_gridworld()
        cfg = QLearningConfig(episodes=1, horizon=2)
        with pytest.warns(PolicyQualityWarning):
            pi = optimize_on_learned_reward(m, RewardModel.linear(m.true_weights), "q-learning", cfg, seed=0)
        assert pi.info["below_quality_gate"]

    def test_unknown_method(self, chain):
        with pytest.raises(ValueError):
            optimize_on_learned_reward(chain, np.zeros(3), "policy-gradient")

    def test_enumeration_cap(self):
        with pytest.raises(ValueError):
            list(enumerate_deterministic_policies(terrain_gridworld(), max_policies=100))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_vi_bellman_fixed_point(seed):
    m = random_mdp(np.random.default_rng(seed))
    vf, pi = value_iteration(m)
    Q = m.true_reward()[:, None] + m.discount * m.transitions @ vf.V
    assert np.allclose(Q.max(axis=1), vf.V, atol=1e-9)
    assert policy_return(m, pi) == pytest.approx(m.initial_distribution @ vf.V, abs=1e-8)
