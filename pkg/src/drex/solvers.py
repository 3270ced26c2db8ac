"""Exact planning and tabular Q-learning.

``value_iteration`` is the exact route used by the theory checks and by the
default policy-optimisation stage; ``q_learning`` is the sample-based
stand-in for a deep RL optimiser.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError
from .mdp import Mdp, policy_matrix, policy_return
from .policy import Policy

TIE_TOL = 1e-10


class PolicyQualityWarning(UserWarning):
    """Q-learning finished below the configured quality gate."""


@dataclass
class ValueFunction:
    V: np.ndarray
    Q: np.ndarray
    residual: float = 0.0
    iterations: int = 0


def bellman_q(mdp: Mdp, reward: np.ndarray, V: np.ndarray, discount: Optional[float] = None) -> np.ndarray:
    gamma = mdp.discount if discount is None else discount
    return reward[:, None] + gamma * mdp.transitions @ V


def greedy_actions(Q: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Per-state argmax with near-ties resolved to the lowest action index."""
    best = Q.max(axis=1, keepdims=True)
    near = Q >= best - tol * (1.0 + np.abs(best))
    return np.argmax(near, axis=1)


def optimal_action_sets(Q: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of all (near-)optimal actions per state."""
    best = Q.max(axis=1, keepdims=True)
    return Q >= best - tol * (1.0 + np.abs(best))


def value_iteration(mdp: Mdp, reward=None, tol: float = 1e-10, max_iters: int = 100_000):
    """Infinite-horizon value iteration; returns ``(ValueFunction, greedy Policy)``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = mdp.true_reward() if reward is None else np.asarray(reward, dtype=float)
    V = np.zeros(mdp.n_states)
    # stop when ||V_{k+1} - V_k|| < tol (1 - gamma) / gamma, which bounds the residual of V_{k+1} by tol
    stop = tol * (1.0 - mdp.discount) / max(mdp.discount, 1e-300)
    residual = np.inf
    for it in range(1, max_iters + 1):
        V_new = bellman_q(mdp, r, V).max(axis=1)
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if delta < stop or mdp.discount == 0.0:
            residual = float(np.max(np.abs(bellman_q(mdp, r, V).max(axis=1) - V)))
            if residual < tol:
                break
    else:
        residual = float(np.max(np.abs(bellman_q(mdp, r, V).max(axis=1) - V)))
        if residual >= tol:
            raise ConvergenceError(f"value iteration did not converge in {max_iters} iterations", residual)
    Q = bellman_q(mdp, r, V)
    policy = Policy.deterministic(greedy_actions(Q), mdp.n_actions, "optimal")
    return ValueFunction(V, Q, residual, it), policy


def truncated_value_iteration(mdp: Mdp, n_iters: int, reward=None) -> ValueFunction:
    """``n_iters`` Bellman backups from ``V = 0`` without any convergence test."""
    r = mdp.true_reward() if reward is None else np.asarray(reward, dtype=float)
    V = np.zeros(mdp.n_states)
    for _ in range(int(n_iters)):
        V = bellman_q(mdp, r, V).max(axis=1)
    return ValueFunction(V, bellman_q(mdp, r, V), iterations=int(n_iters))


def finite_horizon_q(mdp: Mdp, horizon: int, reward=None, discount: Optional[float] = None) -> np.ndarray:
    """Non-stationary optimal action values; ``Q[t]`` is the value with ``horizon - t`` states to go."""
    r = mdp.true_reward() if reward is None else np.asarray(reward, dtype=float)
    Q = np.empty((horizon, mdp.n_states, mdp.n_actions))
    V = np.zeros(mdp.n_states)
    for t in reversed(range(horizon)):
        if t == horizon - 1:
            Q[t] = np.repeat(r[:, None], mdp.n_actions, axis=1)
        else:
            Q[t] = bellman_q(mdp, r, V, discount)
        V = Q[t].max(axis=1)
    return Q


def iterative_policy_evaluation(mdp: Mdp, policy, reward=None, tol: float = 1e-12, max_iters: int = 1_000_000) -> np.ndarray:
    """Fixed-point iteration ``V <- R + gamma P_pi V``; an oracle independent of the linear solve."""
    r = mdp.true_reward() if reward is None else np.asarray(reward, dtype=float)
    P = policy_matrix(mdp, policy)
    V = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        V_new = r + mdp.discount * P @ V
        if np.max(np.abs(V_new - V)) < tol:
            return V_new
        V = V_new
    raise ConvergenceError("policy evaluation did not converge", float(np.max(np.abs(V_new - V))))


def enumerate_deterministic_policies(mdp: Mdp, max_policies: int = 200_000):
    """Yield every deterministic policy (only sensible for tiny MDPs)."""
    count = mdp.n_actions**mdp.n_states
    if count > max_policies:
        raise ValueError(f"{count} deterministic policies exceed the enumeration cap {max_policies}")
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        yield Policy.deterministic(actions, mdp.n_actions, "other")


def sigmoid_normalize(raw) -> np.ndarray:
    """Squash raw predicted rewards into (0, 1) with the logistic function."""
    return expit(np.asarray(raw, dtype=float))


@dataclass
class QLearningConfig:
    version: str = "qlearn-v1"
    episodes: int = 10_000
    horizon: Optional[int] = None
    learning_rate: float = 0.1
    lr_decay: float = 0.0  # per-pair step size lr / n(s, a)^decay
    explore_start: float = 1.0
    explore_end: float = 0.05
    quality_gate: float = 0.1  # tolerated fraction of the optimal-minus-uniform gap
    optimistic_init: Optional[float] = None  # None: max(r) / (1 - gamma), an upper bound on every value

    def to_dict(self):
        return asdict(self)


def q_learning(mdp: Mdp, reward, config: QLearningConfig, rng: np.random.Generator):
    """Tabular Q-learning on a per-state reward; returns ``(Q, greedy Policy)``."""
    r = np.asarray(reward, dtype=float)
    T = config.horizon or mdp.horizon or 50
    S, A = mdp.n_states, mdp.n_actions
    gamma = mdp.discount
    init = config.optimistic_init
    if init is None:
        init = max(float(r.max()), 0.0) / (1.0 - gamma)
    Q = np.full((S, A), float(init))
    visits = np.zeros((S, A))
    P_cdf = np.cumsum(mdp.transitions, axis=2)
    mu_cdf = np.cumsum(mdp.initial_distribution)
    n_ep = int(config.episodes)
    for ep in range(n_ep):
        frac = ep / max(n_ep - 1, 1)
        explore = config.explore_start + frac * (config.explore_end - config.explore_start)
        s = min(int(np.searchsorted(mu_cdf, rng.random(), side="right")), S - 1)
        for _ in range(T):
            if rng.random() < explore:
                a = int(rng.integers(A))
            else:
                a = int(greedy_actions(Q[s:s + 1])[0])
            s_next = min(int(np.searchsorted(P_cdf[s, a], rng.random(), side="right")), S - 1)
            visits[s, a] += 1
            step = config.learning_rate / visits[s, a] ** config.lr_decay
            Q[s, a] += step * (r[s] + gamma * Q[s_next].max() - Q[s, a])
            s = s_next
    return Q, Policy.deterministic(greedy_actions(Q), A, "learned")


def state_rewards(reward_model, mdp: Mdp) -> np.ndarray:
    """Evaluate a reward model (or pass through a reward vector) on every state."""
    if hasattr(reward_model, "evaluate"):
        return np.asarray(reward_model.evaluate(mdp.features), dtype=float)
    return np.asarray(reward_model, dtype=float).ravel()


def optimize_on_learned_reward(
    mdp: Mdp,
    reward_model,
    method: str = "exact-vi",
    config: Optional[QLearningConfig] = None,
    seed: int = 0,
    sigmoid: Optional[bool] = None,
) -> Policy:
    """Optimise a policy for the learned reward ``R_hat(phi(s))``.

    Sigmoid normalisation defaults to on for Q-learning and off for exact
    planning. A Q-learning policy below the quality gate is still returned,
    with a :class:`PolicyQualityWarning` and ``info["below_quality_gate"]``.
    """
    raw = state_rewards(reward_model, mdp)
    if method == "exact-vi":
        r = sigmoid_normalize(raw) if sigmoid else raw
        _, policy = value_iteration(mdp, r)
        policy.provenance = "learned"
        policy.info = {"method": method, "sigmoid": bool(sigmoid)}
        return policy
    if method != "q-learning":
        raise ValueError(f"unknown policy optimisation method {method!r}")
    config = config or QLearningConfig()
    use_sigmoid = True if sigmoid is None else sigmoid
    r = sigmoid_normalize(raw) if use_sigmoid else raw
    _, policy = q_learning(mdp, r, config, np.random.default_rng(seed))
    _, best = value_iteration(mdp, r)
    j_best = policy_return(mdp, best, r)
    j_unif = policy_return(mdp, np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions), r)
    j_q = policy_return(mdp, policy, r)
    gap = j_best - j_unif
    quality = 1.0 if gap <= 0 else (j_q - j_unif) / gap
    below = quality < 1.0 - config.quality_gate
    policy.info = {"method": method, "sigmoid": use_sigmoid, "quality": float(quality), "below_quality_gate": bool(below)}
    if below:
        warnings.warn(
            f"Q-learning reached {quality:.3f} of the optimal-minus-uniform gap (gate {1 - config.quality_gate:.3f})",
            PolicyQualityWarning,
            stacklevel=2,
        )
    return policy


def uniform_policy(mdp: Mdp) -> Policy:
    return Policy.uniform(mdp.n_states, mdp.n_actions)
