"""Computable checks for the extrapolation condition, the ranking counterexample
and the noise-degradation model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cloning import epsilon_greedy_wrap, estimate_beta
from .envs import prop1_mdp
from .errors import PreconditionError, TheoremInapplicableError
from .mdp import Mdp, Trajectory, policy_feature_expectations, policy_return, rollout, trajectory_feature_counts
from .policy import Policy
from .reward import RewardModel
from .solvers import enumerate_deterministic_policies, finite_horizon_q, value_iteration


@dataclass
class TheoremOneReport:
    delta: float  # J(pi*) - J(D) under the true reward
    eps_phi: float  # sup-norm gap between feature expectations of pi* and pi_hat
    eps_reward: float  # sup-norm per-state reward error
    bound: float
    condition_holds: bool
    extrapolated: bool
    J_optimal: float
    J_learned: float
    J_demos: float
    scale: float  # factor both rewards were divided by

    def consistent(self) -> bool:
        return self.extrapolated or not self.condition_holds


def theorem1_check(mdp: Mdp, reward_model, policy, demos: Sequence[Trajectory]) -> TheoremOneReport:
    """Evaluate the sufficient condition for ``policy`` to beat the demonstrations.

    Both the learned and the true weights are divided by
    ``max(1, ||w_hat||_1)``, which keeps ``||w||_1 <= 1`` for both and leaves
    every comparison unchanged. Feature expectations and policy returns are
    exact infinite-horizon quantities; the demonstration return is the mean
    discounted return of the given trajectories.
    """
    if not isinstance(reward_model, RewardModel) or reward_model.kind != "linear":
        raise TheoremInapplicableError("the extrapolation condition is stated for linear rewards only")
    if len(demos) == 0:
        raise PreconditionError("no demonstrations")
    w_hat = reward_model.params["w"]
    scale = max(1.0, float(np.abs(w_hat).sum()))
    w_true = mdp.true_weights / scale
    w_hat = w_hat / scale
    r_true = mdp.features @ w_true
    eps_reward = float(np.max(np.abs(r_true - mdp.features @ w_hat)))

    _, pi_star = value_iteration(mdp, r_true)
    phi_star = policy_feature_expectations(pi_star, mdp)
    phi_hat = policy_feature_expectations(policy, mdp)
    eps_phi = float(np.max(np.abs(phi_star - phi_hat)))

    J_star = float(w_true @ phi_star)
    J_hat = float(w_true @ phi_hat)
    J_demo = float(np.mean([trajectory_feature_counts(t, mdp.features, mdp.discount) @ w_true for t in demos]))
    delta = J_star - J_demo
    bound = eps_phi + 2.0 * eps_reward / (1.0 - mdp.discount)
    return TheoremOneReport(delta, eps_phi, eps_reward, bound, bool(delta > bound), bool(J_hat > J_demo),
                            J_star, J_hat, J_demo, scale)


def random_instance(rng: np.random.Generator):
    """A random tabular MDP, a perturbed linear reward estimate, its optimal policy and some demonstrations."""
    S = int(rng.integers(3, 9))
    A = int(rng.integers(2, 5))
    d = int(rng.integers(2, 5))
    gamma = float(rng.choice([0.5, 0.8, 0.9]))
    P = rng.dirichlet(np.full(S, 0.5), size=(S, A))
    F = rng.random((S, d))
    w = rng.standard_normal(d)
    mu = rng.dirichlet(np.ones(S))
    mdp = Mdp(P, F, w / np.abs(w).sum(), gamma, mu, 30, "random")
    noise = float(rng.choice([0.0, 0.001, 0.01, 0.1, 0.5]))
    model = RewardModel.linear(mdp.true_weights + noise * rng.standard_normal(d))
    _, pi_hat = value_iteration(mdp, F @ model.params["w"])
    demo_eps = float(rng.uniform(0.2, 1.0))
    _, pi_star = value_iteration(mdp)
    demos = rollout(mdp, epsilon_greedy_wrap(pi_star, demo_eps), int(rng.integers(3, 11)), rng)
    return mdp, model, pi_hat, demos


@dataclass
class TheoremSuiteResult:
    reports: list
    n_condition: int
    n_counterexamples: int


def theorem1_suite(n_instances: int = 500, seed: int = 0) -> TheoremSuiteResult:
    """Check the implication on randomized instances."""
    rng = np.random.default_rng(seed)
    reports = [theorem1_check(*random_instance(rng)) for _ in range(n_instances)]
    return TheoremSuiteResult(
        reports,
        sum(r.condition_holds for r in reports),
        sum(not r.consistent() for r in reports),
    )


def projected_subgradient(normals: np.ndarray, margin: float = 0.1, lr: float = 0.01, max_iters: int = 100_000):
    """Find ``w`` in ``[-1, 1]^d`` with ``w . x >= margin`` for every row ``x``.

    Starts at zero and steps along the sum of violated normals; returns
    ``(w, satisfied)``.
    """
    X = np.atleast_2d(np.asarray(normals, dtype=float))
    w = np.zeros(X.shape[1])
    for _ in range(max_iters):
        violated = X @ w < margin
        if not violated.any():
            return w, True
        w = np.clip(w + lr * X[violated].sum(axis=0), -1.0, 1.0)
    return w, False


@dataclass
class Prop1Report:
    delta: float
    expert_only_weights: np.ndarray
    ranked_weights: np.ndarray
    expert_only_returns: tuple  # (J(pi_1), J(pi_2)) under the expert-only estimate
    ranked_returns: tuple
    reference_equal: bool  # (0, 1, 0, 0) is feasible and ties pi_1 with pi_2
    expert_only_equal: bool
    ranked_separates: bool
    expert_optimal: tuple  # under (expert-only, ranked) estimates
    true_optimal: bool
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _is_argmax(mdp: Mdp, policy: Policy, reward: np.ndarray) -> bool:
    J = policy_return(mdp, policy, reward)
    return all(J >= policy_return(mdp, p, reward) for p in enumerate_deterministic_policies(mdp))


def prop1_demo(delta: float = 10.0, margin: float = 0.1) -> Prop1Report:
    """Optimal demonstrations alone cannot tell a harmless mistake from a disastrous one; a ranking can.

    The expert always plays ``a``; ``pi_2`` plays ``b`` (to the neutral
    state) and ``pi_1`` plays ``c`` (to the disaster). Feasible rewards are
    found by projected subgradient on margin constraints over the one-hot
    state features.
    """
    mdp = prop1_mdp(delta)
    expert = Policy.deterministic([0, 0, 0, 0], 3, "demonstrator")
    pi2 = Policy.deterministic([1, 0, 0, 0], 3)
    pi1 = Policy.deterministic([2, 0, 0, 0], 3)
    phi_e = policy_feature_expectations(expert, mdp)
    expert_normals = []
    for p in enumerate_deterministic_policies(mdp):
        x = phi_e - policy_feature_expectations(p, mdp)
        if np.any(x):
            expert_normals.append(x)
    expert_normals = np.array(expert_normals)

    def returns(w):
        r = mdp.features @ w
        return policy_return(mdp, pi1, r), policy_return(mdp, pi2, r)

    w_ref = np.array([0.0, 1.0, 0.0, 0.0])
    J_ref = returns(w_ref)
    reference_equal = bool(np.all(expert_normals @ w_ref >= 0) and J_ref[0] == J_ref[1])

    w_expert, ok_expert = projected_subgradient(expert_normals, margin)
    J_expert = returns(w_expert)

    T = mdp.horizon
    tau = {
        name: Trajectory(np.array([0] + [s] * (T - 1)), np.full(T, a))
        for name, s, a in (("star", 1, 0), ("2", 2, 1), ("1", 3, 2))
    }
    phi_tau = {k: trajectory_feature_counts(t, mdp.features, mdp.discount) for k, t in tau.items()}
    ranking_normals = np.array([phi_tau["star"] - phi_tau["2"], phi_tau["2"] - phi_tau["1"]])
    w_ranked, ok_ranked = projected_subgradient(np.vstack([expert_normals, ranking_normals]), margin)
    J_ranked = returns(w_ranked)

    opt_expert = _is_argmax(mdp, expert, mdp.features @ w_expert)
    opt_ranked = _is_argmax(mdp, expert, mdp.features @ w_ranked)
    true_opt = _is_argmax(mdp, expert, mdp.true_reward())
    checks = {
        "expert_only_equal": ok_expert and J_expert[0] == J_expert[1] and reference_equal,
        "ranking_separates": ok_ranked and J_ranked[0] < J_ranked[1],
        "expert_optimal": opt_expert and opt_ranked and true_opt,
    }
    return Prop1Report(delta, w_expert, w_ranked, J_expert, J_ranked, reference_equal,
                       bool(ok_expert and J_expert[0] == J_expert[1]), bool(ok_ranked and J_ranked[0] < J_ranked[1]),
                       (opt_expert, opt_ranked), true_opt, checks)


@dataclass(frozen=True)
class DegradationModel:
    beta: float
    horizon: int
    n_actions: int

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.horizon < 1 or self.n_actions < 1:
            raise ValueError("horizon and action count must be positive")


@dataclass(frozen=True)
class DegradationBound:
    p_exact: float
    p_large_action: float
    bound: float  # T^2 * (1 - beta (1 - eps)), in units of the per-step reward range


def degradation_bound(model: DegradationModel, epsilon: float) -> DegradationBound:
    """Per-step mistake probability of the noisy clone and the compounding return-gap bound."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    b, A = model.beta, model.n_actions
    p_exact = (1.0 - b) * (1.0 - epsilon) + epsilon * (A - 1) / A
    p_large = 1.0 - b * (1.0 - epsilon)
    return DegradationBound(p_exact, p_large, model.horizon**2 * p_large)


@dataclass
class CloneGapRow:
    epsilon: float
    beta: float
    J_optimal: float
    J_clone: float
    gap: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound + 1e-9


def clone_gap_check(mdp: Mdp, clone, levels: Sequence[float], horizon: Optional[int] = None) -> list[CloneGapRow]:
    """Exact undiscounted finite-horizon gap ``J(pi*) - J(clone, eps)`` against its bound.

    ``beta`` is measured under the noisy clone's own state distribution and
    the bound is scaled by the per-step true-reward range.
    """
    T = horizon or mdp.horizon
    r = mdp.true_reward()
    span = float(np.ptp(r))
    J_star = float(mdp.initial_distribution @ finite_horizon_q(mdp, T, discount=1.0)[0].max(axis=1))
    rows = []
    for eps in levels:
        beta = estimate_beta(mdp, clone, T, eps)
        J = policy_return(mdp, epsilon_greedy_wrap(clone, eps), horizon=T, discount=1.0)
        b = degradation_bound(DegradationModel(min(max(beta, 0.0), 1.0), T, mdp.n_actions), eps)
        rows.append(CloneGapRow(float(eps), beta, J_star, J, J_star - J, b.bound * span))
    return rows
