"""Suboptimal demonstrators, behavioural cloning and epsilon-greedy noise injection."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import DemonstratorDegenerateError, EmptyDatasetError, PreconditionError
from .mdp import Mdp, Trajectory, dataset_return, policy_return, rollout
from .policy import Policy, as_probs
from .solvers import finite_horizon_q, optimal_action_sets, truncated_value_iteration, value_iteration

log = logging.getLogger(__name__)

DEMONSTRATOR_MODES = ("truncated-vi", "softmax-temperature", "epsilon-perturbed-optimal")
DEFAULT_SMOOTHING = 1e-3


@dataclass
class DemonstratorSpec:
    mode: str = "epsilon-perturbed-optimal"
    parameter: float = 0.5
    n_demos: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in DEMONSTRATOR_MODES:
            raise PreconditionError(f"unknown demonstrator mode {self.mode!r}")
        if self.n_demos < 1:
            raise PreconditionError("n_demos must be at least 1")
        if self.mode == "truncated-vi" and (self.parameter < 0 or int(self.parameter) != self.parameter):
            raise PreconditionError("truncated-vi takes a non-negative integer iteration cap")
        if self.mode == "softmax-temperature" and self.parameter <= 0:
            raise PreconditionError("softmax temperature must be positive")
        if self.mode == "epsilon-perturbed-optimal" and not 0.0 <= self.parameter <= 1.0:
            raise PreconditionError("epsilon must lie in [0, 1]")


@dataclass
class NoiseSchedule:
    levels: tuple
    rollouts_per_level: int = 5

    def __post_init__(self):
        self.levels = tuple(float(e) for e in self.levels)
        if len(self.levels) == 0:
            raise PreconditionError("noise schedule is empty")
        if any(not 0.0 <= e <= 1.0 for e in self.levels):
            raise PreconditionError("noise levels must lie in [0, 1]")
        if any(a <= b for a, b in zip(self.levels, self.levels[1:])):
            raise PreconditionError("noise levels must be strictly decreasing")
        if self.rollouts_per_level < 1:
            raise PreconditionError("rollouts_per_level must be at least 1")

    @classmethod
    def evenly_spaced(cls, n_levels: int = 20, rollouts_per_level: int = 5) -> "NoiseSchedule":
        """``n_levels`` values from 1 down to 0 inclusive."""
        return cls(tuple(np.linspace(1.0, 0.0, n_levels)), rollouts_per_level)


@dataclass
class ClonedPolicy:
    policy: Policy
    nll_history: list = field(default_factory=list)
    iterations: int = 0

    @property
    def final_nll(self) -> float:
        return self.nll_history[-1] if self.nll_history else float("nan")


def epsilon_greedy_wrap(policy, epsilon: float) -> Policy:
    """Act greedily w.r.t. ``policy`` with prob ``1 - eps`` and uniformly otherwise.

    The greedy action keeps ``1 - eps + eps/|A|``; every other action gets ``eps/|A|``.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    probs = as_probs(policy)
    S, A = probs.shape
    greedy = np.argmax(probs, axis=1)
    wrapped = np.full((S, A), epsilon / A)
    wrapped[np.arange(S), greedy] = 1.0 - epsilon + epsilon / A
    out = Policy(wrapped, "epsilon-wrapped", {"epsilon": float(epsilon)})
    return out


def demonstrator_policy(mdp: Mdp, spec: DemonstratorSpec) -> Policy:
    if spec.mode == "truncated-vi":
        vf = truncated_value_iteration(mdp, int(spec.parameter))
        # uniform over tied greedy actions: zero iterations gives the uniform policy
        mask = optimal_action_sets(vf.Q, tol=1e-12).astype(float)
        return Policy(mask / mask.sum(axis=1, keepdims=True), "truncated")
    vf, pi_star = value_iteration(mdp)
    if spec.mode == "softmax-temperature":
        return Policy(softmax(vf.Q / spec.parameter, axis=1), "demonstrator")
    out = epsilon_greedy_wrap(pi_star, spec.parameter)
    out.provenance = "demonstrator"
    return out


def _strictly_between(value, low, high) -> bool:
    tol = 1e-9 * (1.0 + max(abs(low), abs(high)))
    return low + tol < value < high - tol


def generate_demonstrations(mdp: Mdp, spec: DemonstratorSpec, horizon: Optional[int] = None, max_retries: int = 10):
    """Roll out the suboptimal demonstrator ``spec.n_demos`` times.

    Both the demonstrator's exact return and the demonstration average must
    lie strictly between the uniform-random and optimal returns; a sample
    outside the band is redrawn with a fresh seed up to ``max_retries`` times.
    """
    T = horizon or mdp.horizon
    policy = demonstrator_policy(mdp, spec)
    _, pi_star = value_iteration(mdp)
    j_opt = policy_return(mdp, pi_star, horizon=T)
    j_rand = policy_return(mdp, Policy.uniform(mdp.n_states, mdp.n_actions), horizon=T)
    j_demo = policy_return(mdp, policy, horizon=T)
    if not _strictly_between(j_demo, j_rand, j_opt):
        raise DemonstratorDegenerateError(
            f"demonstrator return {j_demo:.6g} is not strictly between random {j_rand:.6g} and optimal {j_opt:.6g}"
        )
    seeds = np.random.SeedSequence(spec.seed).spawn(max_retries + 1)
    for attempt, ss in enumerate(seeds):
        seed = int(ss.generate_state(1)[0])
        demos = rollout(mdp, policy, spec.n_demos, np.random.default_rng(ss), T, None, seed)
        avg = dataset_return(demos, mdp.true_reward(), mdp.discount)
        if _strictly_between(avg, j_rand, j_opt):
            return demos
        log.info("demonstration attempt %d average %.4g outside (%.4g, %.4g); resampling", attempt, avg, j_rand, j_opt)
    raise DemonstratorDegenerateError(f"no demonstration sample inside the suboptimality band after {max_retries} retries")


def _state_action_pairs(demos: Sequence[Trajectory]):
    if len(demos) == 0:
        raise EmptyDatasetError("behavioural cloning needs at least one demonstration")
    states = np.concatenate([t.states for t in demos])
    actions = np.concatenate([t.actions for t in demos])
    return states, actions


def _tabular_clone(states, actions, n_states, n_actions, alpha):
    counts = np.zeros((n_states, n_actions))
    np.add.at(counts, (states, actions), 1.0)
    smoothed = counts + alpha
    totals = smoothed.sum(axis=1, keepdims=True)
    probs = np.where(totals > 0, smoothed / np.where(totals > 0, totals, 1.0), 1.0 / n_actions)
    nll = -float(np.sum(np.log(probs[states, actions]))) / states.size
    return ClonedPolicy(Policy(probs, "cloned"), [nll], 1)


def softmax_linear_nll(theta, state_features, states, actions, l2=0.0):
    """Mean negative log-likelihood of ``pi(a|s) ∝ exp(theta[a] . x(s))`` and its gradient."""
    X = state_features[states]
    logp = log_softmax(X @ theta.T, axis=1)
    n = states.size
    nll = -logp[np.arange(n), actions].mean() + 0.5 * l2 * np.sum(theta**2)
    resid = np.exp(logp)
    resid[np.arange(n), actions] -= 1.0
    grad = resid.T @ X / n + l2 * theta
    return float(nll), grad


def _softmax_linear_clone(states, actions, state_features, n_actions, lr, tol, max_iters, l2):
    theta = np.zeros((n_actions, state_features.shape[1]))
    nll, grad = softmax_linear_nll(theta, state_features, states, actions, l2)
    history = [nll]
    it = 0
    while it < max_iters and np.linalg.norm(grad) >= tol:
        step = lr
        # halve the step until the likelihood does not get worse
        while True:
            cand = theta - step * grad
            cand_nll, cand_grad = softmax_linear_nll(cand, state_features, states, actions, l2)
            if cand_nll <= nll or step < 1e-12:
                break
            step *= 0.5
        theta, nll, grad = cand, cand_nll, cand_grad
        history.append(nll)
        it += 1
    probs = softmax(state_features @ theta.T, axis=1)
    return ClonedPolicy(Policy(probs, "cloned", {"theta": theta}), history, it)


def behavioral_cloning(
    demos: Sequence[Trajectory],
    n_states: int,
    n_actions: int,
    model: str = "tabular",
    alpha: float = DEFAULT_SMOOTHING,
    state_features: Optional[np.ndarray] = None,
    lr: float = 1.0,
    tol: float = 1e-4,
    max_iters: int = 5000,
    l2: float = 1e-3,
) -> ClonedPolicy:
    """Maximum-likelihood cloning of the demonstrated state-action pairs.

    ``tabular`` returns smoothed empirical action frequencies (uniform on
    unvisited states). ``softmax-linear`` fits a softmax over
    ``state_features`` (one-hot states by default) by gradient descent on
    the negative log-likelihood.
    """
    states, actions = _state_action_pairs(demos)
    if model == "tabular":
        return _tabular_clone(states, actions, n_states, n_actions, alpha)
    if model == "softmax-linear":
        X = np.eye(n_states) if state_features is None else np.asarray(state_features, dtype=float)
        return _softmax_linear_clone(states, actions, X, n_actions, lr, tol, max_iters, l2)
    raise ValueError(f"unknown cloning model {model!r}")


def noisy_rollouts(
    mdp: Mdp,
    policy,
    schedule: NoiseSchedule,
    seed: int,
    horizon: Optional[int] = None,
    workers: int = 1,
) -> dict:
    """``K`` rollouts of the epsilon-wrapped policy per level, keyed by epsilon.

    Every level draws from its own child seed, so results do not depend on
    ``workers`` or on execution order.
    """
    children = np.random.SeedSequence(seed).spawn(len(schedule.levels))

    def one(i):
        eps = schedule.levels[i]
        child_seed = int(children[i].generate_state(1)[0])
        return rollout(mdp, epsilon_greedy_wrap(policy, eps), schedule.rollouts_per_level,
                       np.random.default_rng(children[i]), horizon, eps, child_seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(schedule.levels))))
    else:
        results = [one(i) for i in range(len(schedule.levels))]
    return {eps: trajs for eps, trajs in zip(schedule.levels, results)}


def coupled_rollouts(
    mdp: Mdp,
    policy,
    levels: Sequence[float],
    n: int,
    seed: int,
    horizon: Optional[int] = None,
) -> dict:
    """``n`` rollouts of the epsilon-wrapped policy per level, sharing random numbers across levels.

    Rollout ``i`` uses the same uniforms at every level: a step explores when
    its noise draw falls below epsilon, and then takes action
    ``floor(u * |A|)``. Level-to-level differences are therefore not
    swamped by sampling noise.
    """
    T = horizon if horizon is not None else mdp.horizon
    rng = np.random.default_rng(seed)
    u_init = rng.random(n)
    u_noise, u_act, u_next = rng.random((3, n, T))
    greedy = Policy(as_probs(policy)).greedy_actions()
    P_cdf = np.cumsum(mdp.transitions, axis=2)
    init_cdf = np.cumsum(mdp.initial_distribution)
    A = mdp.n_actions

    def pick(cdf_rows, u):
        return np.minimum((cdf_rows < u[:, None]).sum(axis=1), cdf_rows.shape[1] - 1)

    out = {}
    for eps in levels:
        states = np.empty((n, T), dtype=int)
        actions = np.empty((n, T), dtype=int)
        s = pick(np.tile(init_cdf, (n, 1)), u_init)
        for t in range(T):
            a = np.where(u_noise[:, t] < eps, np.minimum((u_act[:, t] * A).astype(int), A - 1), greedy[s])
            states[:, t] = s
            actions[:, t] = a
            s = pick(P_cdf[s, a], u_next[:, t])
        out[eps] = [Trajectory(states[i], actions[i], float(eps), seed) for i in range(n)]
    return out


@dataclass
class DegradationRow:
    epsilon: float
    mean_return: float
    std_return: float
    n_rollouts: int

    @property
    def std_error(self) -> float:
        return self.std_return / np.sqrt(self.n_rollouts)


def degradation_curve(
    policy,
    mdp: Mdp,
    schedule: NoiseSchedule,
    rollouts: Optional[int] = None,
    seed: int = 0,
    horizon: Optional[int] = None,
    workers: int = 1,
    groups: Optional[dict] = None,
    coupled: bool = True,
) -> list[DegradationRow]:
    """Monte Carlo mean and standard deviation of the true return at each noise level.

    By default the levels share random numbers (:func:`coupled_rollouts`).
    Pass ``groups`` (from :func:`noisy_rollouts`) to summarise rollouts that
    were already drawn.
    """
    if groups is None:
        n = rollouts if rollouts is not None else schedule.rollouts_per_level
        if coupled:
            groups = coupled_rollouts(mdp, policy, schedule.levels, n, seed, horizon)
        else:
            groups = noisy_rollouts(mdp, policy, NoiseSchedule(schedule.levels, n), seed, horizon, workers)
    r = mdp.true_reward()
    rows = []
    for eps in schedule.levels:
        returns = np.array([np.dot(mdp.discount ** np.arange(len(t)), r[t.states]) for t in groups[eps]])
        std = float(returns.std(ddof=1)) if returns.size > 1 else 0.0
        rows.append(DegradationRow(float(eps), float(returns.mean()), std, int(returns.size)))
    return rows


def monotonicity_violations(rows: Sequence[DegradationRow], tolerance_se: float = 1.0) -> list:
    """Adjacent level pairs where the noisier level beats the cleaner one by more than
    ``tolerance_se`` pooled standard errors, ``sqrt(se_i**2 + se_j**2)``."""
    bad = []
    ordered = sorted(rows, key=lambda r: -r.epsilon)
    for noisy, clean in zip(ordered, ordered[1:]):
        pooled = np.hypot(noisy.std_error, clean.std_error)
        if noisy.mean_return - clean.mean_return > tolerance_se * pooled:
            bad.append((noisy.epsilon, clean.epsilon, noisy.mean_return - clean.mean_return, float(pooled)))
    return bad


def degradation_csv(rows: Sequence[DegradationRow]) -> str:
    lines = ["epsilon,mean_return,std_return,n_rollouts"]
    lines += [f"{r.epsilon!r},{r.mean_return!r},{r.std_return!r},{r.n_rollouts}" for r in rows]
    return "\n".join(lines) + "\n"


def estimate_beta(mdp: Mdp, policy, horizon: Optional[int] = None, epsilon: float = 0.0) -> float:
    """Probability that the clone's greedy action is optimal, averaged over time.

    States are weighted by the visitation of the epsilon-wrapped clone, and
    optimality is judged against the finite-horizon (undiscounted) optimal
    action sets at each step.
    """
    T = horizon or mdp.horizon
    Q = finite_horizon_q(mdp, T, discount=1.0)
    wrapped = epsilon_greedy_wrap(policy, epsilon)
    P = np.einsum("sa,sat->st", wrapped.probs, mdp.transitions)
    actions = epsilon_greedy_wrap(policy, 0.0).greedy_actions()
    dist = mdp.initial_distribution.copy()
    agree = 0.0
    for t in range(T):
        ok = optimal_action_sets(Q[t])[np.arange(mdp.n_states), actions]
        agree += float(dist @ ok)
        dist = dist @ P
    return agree / T


def noop_trajectories(mdp: Mdp, k: int, horizon: Optional[int] = None, stay_action: int = 0) -> list[Trajectory]:
    """``k`` trajectories that idle at a start state; ranked below every noise level."""
    T = horizon or mdp.horizon
    starts = np.flatnonzero(mdp.initial_distribution > 0)
    out = []
    for i in range(k):
        s = int(starts[i % starts.size])
        out.append(Trajectory(np.full(T, s), np.full(T, stay_action), None))
    return out


def exact_degradation(mdp: Mdp, policy, levels: Sequence[float], horizon: Optional[int] = None) -> np.ndarray:
    """Exact finite-horizon true return of the wrapped clone at each level."""
    T = horizon or mdp.horizon
    return np.array([policy_return(mdp, epsilon_greedy_wrap(policy, e), horizon=T) for e in levels])
