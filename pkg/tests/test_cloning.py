import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drex.cloning import (
    DemonstratorSpec,
    NoiseSchedule,
    behavioral_cloning,
    coupled_rollouts,
    degradation_csv,
    degradation_curve,
    demonstrator_policy,
    epsilon_greedy_wrap,
    estimate_beta,
    generate_demonstrations,
    monotonicity_violations,
    noisy_rollouts,
    noop_trajectories,
    softmax_linear_nll,
)
from drex.envs import lava_gridworld, prop1_mdp, terrain_gridworld
from drex.errors import DemonstratorDegenerateError, EmptyDatasetError, PreconditionError
from drex.mdp import Trajectory, policy_return
from drex.policy import Policy
from drex.solvers import value_iteration

from conftest import chain_mdp


class TestEpsilonWrap:
    def test_probabilities(self):
        pi = Policy(np.array([[0.1, 0.7, 0.2]]))
        w = epsilon_greedy_wrap(pi, 0.3)
        assert np.allclose(w.probs, [[0.1, 0.8, 0.1]])

    @pytest.mark.parametrize("eps", [-0.01, 1.01])
    def test_range(self, eps):
        with pytest.raises(ValueError):
            epsilon_greedy_wrap(Policy.uniform(2, 2), eps)

    def test_endpoints(self):
        pi = Policy.deterministic([2, 0], 3)
        assert np.array_equal(epsilon_greedy_wrap(pi, 0.0).probs, pi.probs)
        assert np.allclose(epsilon_greedy_wrap(pi, 1.0).probs, 1 / 3)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(1, 7), st.integers(0, 10_000))
def test_wrap_is_a_distribution(eps, A, seed):
    probs = np.random.default_rng(seed).dirichlet(np.ones(A), size=4)
    w = epsilon_greedy_wrap(Policy(probs), eps)
    assert np.allclose(w.probs.sum(axis=1), 1.0)
    assert np.all(w.probs >= eps / A - 1e-15)


class TestDemonstrator:
    def test_truncated_zero_is_uniform(self):
        m = terrain_gridworld()
        pi = demonstrator_policy(m, DemonstratorSpec("truncated-vi", 0))
        assert np.allclose(pi.probs, 1 / m.n_actions)

    def test_softmax_temperature_limits(self):
        m = lava_gridworld()
        cold = demonstrator_policy(m, DemonstratorSpec("softmax-temperature", 1e-4))
        _, best = value_iteration(m)
        assert policy_return(m, cold) == pytest.approx(policy_return(m, best), abs=1e-6)

    @pytest.mark.parametrize("mode, parameter", [("epsilon-perturbed-optimal", 2.0), ("softmax-temperature", 0.0),
                                                 ("truncated-vi", 1.5), ("nope", 1.0)])
    def test_invalid_spec(self, mode, parameter):
        with pytest.raises(PreconditionError):
            DemonstratorSpec(mode, parameter)

    def test_optimal_demonstrator_is_degenerate(self):
        with pytest.raises(DemonstratorDegenerateError):
            generate_demonstrations(lava_gridworld(), DemonstratorSpec("epsilon-perturbed-optimal", 0.0))

    def test_uniform_demonstrator_is_degenerate(self):
        with pytest.raises(DemonstratorDegenerateError):
            generate_demonstrations(lava_gridworld(), DemonstratorSpec("epsilon-perturbed-optimal", 1.0))

    def test_demos_inside_band(self):
        m = terrain_gridworld()
        demos = generate_demonstrations(m, DemonstratorSpec("epsilon-perturbed-optimal", 0.5, 10, 4))
        assert len(demos) == 10 and all(len(t) == m.horizon for t in demos)
        again = generate_demonstrations(m, DemonstratorSpec("epsilon-perturbed-optimal", 0.5, 10, 4))
        assert all(a.steps == b.steps for a, b in zip(demos, again))


class TestCloning:
    def test_tabular_frequencies(self):
        demos = [Trajectory([0, 0, 1, 0], [1, 1, 0, 0])]
        bc = behavioral_cloning(demos, 3, 2, alpha=0.0)
        assert np.allclose(bc.policy.probs[0], [1 / 3, 2 / 3])
        assert np.allclose(bc.policy.probs[1], [1.0, 0.0])
        assert np.allclose(bc.policy.probs[2], [0.5, 0.5])

    def test_smoothing_keeps_support(self):
        bc = behavioral_cloning([Trajectory([0], [0])], 2, 3)
        assert np.all(bc.policy.probs > 0) and bc.policy.probs[0].argmax() == 0

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            behavioral_cloning([], 3, 2)

    def test_softmax_linear_nll_decreases(self, rng):
        m = chain_mdp(horizon=10)
        from drex.mdp import rollout

        demos = rollout(m, Policy(np.array([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]])), 20, rng)
        bc = behavioral_cloning(demos, 3, 2, "softmax-linear")
        assert np.all(np.diff(bc.nll_history) <= 1e-12)
        assert bc.policy.probs[0, 1] > 0.6 and bc.policy.probs[2, 0] > 0.7

    def test_softmax_gradient_finite_differences(self, rng):
        X = rng.standard_normal((5, 3))
        states = rng.integers(5, size=30)
        actions = rng.integers(4, size=30)
        theta = rng.standard_normal((4, 3))
        _, g = softmax_linear_nll(theta, X, states, actions, 0.1)
        h = 1e-6
        fd = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            e = np.zeros_like(theta)
            e[idx] = h
            fd[idx] = (softmax_linear_nll(theta + e, X, states, actions, 0.1)[0]
                       - softmax_linear_nll(theta - e, X, states, actions, 0.1)[0]) / (2 * h)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-8)


class TestNoise:
    def test_schedule_validation(self):
        with pytest.raises(PreconditionError):
            NoiseSchedule((0.5, 0.5))
        with pytest.raises(PreconditionError):
            NoiseSchedule((1.2, 0.5))
        s = NoiseSchedule.evenly_spaced(20, 5)
        assert s.levels[0] == 1.0 and s.levels[-1] == 0.0 and len(s.levels) == 20

    def test_rollouts_independent_of_workers(self):
        m = lava_gridworld()
        pi = value_iteration(m)[1]
        sched = NoiseSchedule.evenly_spaced(6, 3)
        a = noisy_rollouts(m, pi, sched, 11, workers=1)
        b = noisy_rollouts(m, pi, sched, 11, workers=4)
        assert list(a) == list(b)
        assert all(x.steps == y.steps for e in a for x, y in zip(a[e], b[e]))
        assert all(t.noise_level == e for e in a for t in a[e])

    def test_coupled_matches_exact_returns(self):
        """Each level of the coupled sampler has the marginal law of the wrapped policy."""
        m = terrain_gridworld()
        pi = value_iteration(m)[1]
        levels = (1.0, 0.5, 0.0)
        rows = degradation_curve(pi, m, NoiseSchedule(levels, 1), rollouts=4000, seed=3)
        for row in rows:
            exact = policy_return(m, epsilon_greedy_wrap(pi, row.epsilon), horizon=m.horizon)
            assert abs(row.mean_return - exact) <= 3.5 * max(row.std_error, 1e-12) + 1e-12

    def test_coupled_shares_noise_draws(self):
        m = lava_gridworld()
        pi = value_iteration(m)[1]
        groups = coupled_rollouts(m, pi, (0.0, 0.0001), 5, seed=2)
        # at tiny noise the same uniforms almost never explore, so paths coincide with the greedy ones
        assert all(a.steps == b.steps for a, b in zip(groups[0.0], groups[0.0001]))

    def test_csv_schema(self):
        m = prop1_mdp()
        rows = degradation_curve(Policy.uniform(4, 3), m, NoiseSchedule((1.0, 0.0), 1), rollouts=10)
        text = degradation_csv(rows)
        assert text.splitlines()[0] == "epsilon,mean_return,std_return,n_rollouts"
        assert len(text.splitlines()) == 3

    def test_monotonicity_violation_detector(self):
        from drex.cloning import DegradationRow

        rows = [DegradationRow(1.0, 5.0, 1.0, 100), DegradationRow(0.5, 1.0, 1.0, 100)]
        assert monotonicity_violations(rows)
        rows = [DegradationRow(1.0, 1.1, 1.0, 100), DegradationRow(0.5, 1.0, 1.0, 100)]
        assert not monotonicity_violations(rows)


class TestBeta:
    def test_optimal_clone(self):
        m = lava_gridworld()
        assert estimate_beta(m, value_iteration(m)[1]) == pytest.approx(1.0)

    def test_bounds(self):
        m = terrain_gridworld()
        b = estimate_beta(m, Policy.uniform(m.n_states, m.n_actions), epsilon=0.5)
        assert 0.0 <= b <= 1.0


def test_noop_trajectories_idle():
    m = terrain_gridworld()
    for t in noop_trajectories(m, 3):
        assert len(t) == m.horizon and set(t.states.tolist()) == {0} and set(t.actions.tolist()) == {0}
