"""Tabular MDPs with linear state rewards, trajectories and exact returns.

All returns follow the convention ``J(tau) = sum_t gamma^t R(s_t)`` over the
visited states; actions are recorded for cloning but never enter a return.
A trajectory of length ``T`` holds the states ``s_0 .. s_{T-1}``, and the
finite-horizon value of a policy is the expectation of exactly that sum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyDatasetError, InvalidTrajectoryError, MdpValidationError
from .policy import as_probs

ROW_TOL = 1e-9


@dataclass
class Mdp:
    transitions: np.ndarray  # P[s, a, s']
    features: np.ndarray  # phi[s, k]
    true_weights: np.ndarray
    discount: float
    initial_distribution: np.ndarray
    horizon: Optional[int] = None
    name: str = "mdp"
    weight_scale: float = 1.0  # factor already divided out of the supplied weights
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.true_weights = np.asarray(self.true_weights, dtype=float).ravel()
        self.initial_distribution = np.asarray(self.initial_distribution, dtype=float).ravel()
        self.validate()
        l1 = float(np.abs(self.true_weights).sum())
        if l1 > 1.0:
            self.true_weights = self.true_weights / l1
            self.weight_scale = self.weight_scale * l1

    def validate(self):
        P = self.transitions
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise MdpValidationError(f"transitions must have shape (S, A, S), got {P.shape}")
        S = P.shape[0]
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise MdpValidationError("transition probabilities must be finite and non-negative")
        rows = np.abs(P.sum(axis=2) - 1.0)
        if np.any(rows > ROW_TOL):
            s, a = np.unravel_index(np.argmax(rows), rows.shape)
            raise MdpValidationError(f"transition row (s={s}, a={a}) sums to {P[s, a].sum():.12g}, not 1")
        if self.features.shape[0] != S:
            raise MdpValidationError(f"features have {self.features.shape[0]} rows for {S} states")
        if self.true_weights.size != self.features.shape[1]:
            raise MdpValidationError(
                f"true_weights has length {self.true_weights.size}, features have dimension {self.features.shape[1]}"
            )
        if not np.all(np.isfinite(self.features)) or not np.all(np.isfinite(self.true_weights)):
            raise MdpValidationError("features and weights must be finite")
        if not 0.0 <= self.discount < 1.0:
            raise MdpValidationError(f"discount must lie in [0, 1), got {self.discount}")
        mu = self.initial_distribution
        if mu.size != S or np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_TOL:
            raise MdpValidationError("initial_distribution must be a probability vector over states")
        if self.horizon is not None and int(self.horizon) < 1:
            raise MdpValidationError(f"horizon must be positive, got {self.horizon}")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def true_reward(self) -> np.ndarray:
        return self.features @ self.true_weights

    def with_reward(self, weights) -> "Mdp":
        """Copy with different true weights (normalised the same way)."""
        return Mdp(
            self.transitions, self.features, np.asarray(weights, dtype=float), self.discount,
            self.initial_distribution, self.horizon, self.name, 1.0, dict(self.meta),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transitions": self.transitions.ravel().tolist(),
            "features": self.features.tolist(),
            "true_weights": (self.true_weights * self.weight_scale).tolist(),
            "gamma": self.discount,
            "horizon": self.horizon,
            "initial_distribution": self.initial_distribution.tolist(),
        }


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    noise_level: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=int).ravel()
        self.actions = np.asarray(self.actions, dtype=int).ravel()
        if self.states.size == 0:
            raise InvalidTrajectoryError("trajectory is empty")
        if self.actions.size != self.states.size:
            raise InvalidTrajectoryError("trajectory needs one action per state")

    def __len__(self):
        return int(self.states.size)

    @property
    def steps(self):
        return list(zip(self.states.tolist(), self.actions.tolist()))

    def validate(self, mdp: Mdp):
        if self.states.min() < 0 or self.states.max() >= mdp.n_states:
            raise InvalidTrajectoryError(f"state index out of range for {mdp.n_states} states")
        if self.actions.min() < 0 or self.actions.max() >= mdp.n_actions:
            raise InvalidTrajectoryError(f"action index out of range for {mdp.n_actions} actions")
        if mdp.horizon is not None and len(self) > mdp.horizon:
            raise InvalidTrajectoryError(f"trajectory length {len(self)} exceeds horizon {mdp.horizon}")

    def to_dict(self) -> dict:
        return {
            "steps": [[int(s), int(a)] for s, a in self.steps],
            "noise_level": self.noise_level,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data) -> "Trajectory":
        steps = np.asarray(data["steps"], dtype=int).reshape(-1, 2)
        return cls(steps[:, 0], steps[:, 1], data.get("noise_level"), data.get("seed"))


def _reward_vector(reward) -> np.ndarray:
    return np.asarray(reward, dtype=float).ravel()


def trajectory_return(traj: Trajectory, reward, discount: float) -> float:
    """``sum_t gamma^t R(s_t)``; ``reward`` is a per-state vector or a callable on state indices."""
    if callable(reward):
        values = np.asarray([reward(int(s)) for s in traj.states], dtype=float)
    else:
        r = _reward_vector(reward)
        if traj.states.min() < 0 or traj.states.max() >= r.size:
            raise InvalidTrajectoryError(f"state index out of range for reward of size {r.size}")
        values = r[traj.states]
    return float(np.dot(discount ** np.arange(values.size), values))


def dataset_return(trajs: Sequence[Trajectory], reward, discount: float) -> float:
    if len(trajs) == 0:
        raise EmptyDatasetError("dataset return of an empty trajectory set")
    return float(np.mean([trajectory_return(t, reward, discount) for t in trajs]))


def trajectory_feature_counts(traj: Trajectory, features: np.ndarray, discount: float = 1.0) -> np.ndarray:
    """Discounted feature counts ``sum_t gamma^t phi(s_t)`` of one trajectory."""
    weights = discount ** np.arange(len(traj))
    return weights @ np.asarray(features)[traj.states]


def policy_matrix(mdp: Mdp, policy) -> np.ndarray:
    """State-to-state transition matrix ``P_pi[s, s']`` induced by a policy."""
    probs = as_probs(policy)
    if probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})")
    return np.einsum("sa,sat->st", probs, mdp.transitions)


def state_occupancy(mdp: Mdp, policy, horizon: Optional[int] = None, discount: Optional[float] = None) -> np.ndarray:
    """Discounted state visitation ``sum_t gamma^t Pr(s_t = s)``.

    With ``horizon=None`` the infinite sum is obtained from one linear solve;
    otherwise the first ``horizon`` terms are accumulated exactly. A finite
    horizon also admits ``discount=1``.
    """
    gamma = mdp.discount if discount is None else discount
    P = policy_matrix(mdp, policy)
    mu = mdp.initial_distribution
    if horizon is None:
        if not gamma < 1.0:
            raise ValueError("infinite-horizon occupancy needs discount < 1")
        return np.linalg.solve(np.eye(mdp.n_states) - gamma * P.T, mu)
    occ = np.zeros(mdp.n_states)
    dist = mu.copy()
    for t in range(int(horizon)):
        occ += gamma**t * dist
        dist = dist @ P
    return occ


def policy_feature_expectations(policy, mdp: Mdp, horizon: Optional[int] = None) -> np.ndarray:
    """Exact feature expectations ``Phi_pi``; returns are ``w @ Phi_pi``."""
    return state_occupancy(mdp, policy, horizon) @ mdp.features


def policy_return(mdp: Mdp, policy, reward=None, horizon: Optional[int] = None, discount: Optional[float] = None) -> float:
    """Exact expected return of ``policy`` under a per-state ``reward`` (true reward by default)."""
    r = mdp.true_reward() if reward is None else _reward_vector(reward)
    return float(state_occupancy(mdp, policy, horizon, discount) @ r)


def _sample_rows(cdf_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(cdf_rows.shape[0])
    idx = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def rollout(
    mdp: Mdp,
    policy,
    n: int,
    rng: np.random.Generator,
    horizon: Optional[int] = None,
    noise_level: Optional[float] = None,
    seed: Optional[int] = None,
) -> list[Trajectory]:
    """Sample ``n`` trajectories of ``horizon`` states (the MDP's horizon by default)."""
    T = horizon if horizon is not None else mdp.horizon
    if T is None:
        raise ValueError("rollout needs a horizon")
    probs = as_probs(policy)
    pi_cdf = np.cumsum(probs, axis=1)
    P_cdf = np.cumsum(mdp.transitions, axis=2)
    states = np.empty((n, T), dtype=int)
    actions = np.empty((n, T), dtype=int)
    s = _sample_rows(np.tile(np.cumsum(mdp.initial_distribution), (n, 1)), rng)
    for t in range(T):
        a = _sample_rows(pi_cdf[s], rng)
        states[:, t] = s
        actions[:, t] = a
        s = _sample_rows(P_cdf[s, a], rng)
    return [Trajectory(states[i], actions[i], noise_level, seed) for i in range(n)]


SCHEMA_FIELDS = ("n_states", "n_actions", "transitions", "features", "true_weights", "gamma", "initial_distribution")


def _line_of(text: str, key: str) -> Optional[int]:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def mdp_from_json(text: str) -> Mdp:
    """Parse and validate the MDP JSON schema (see README)."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MdpValidationError(f"malformed JSON: {exc.msg}", exc.lineno) from exc
    if not isinstance(data, dict):
        raise MdpValidationError("top-level value must be an object", 1)
    for key in SCHEMA_FIELDS:
        if key not in data:
            raise MdpValidationError(f"missing required field {key!r}", 1)
    S, A = data["n_states"], data["n_actions"]
    try:
        P = np.asarray(data["transitions"], dtype=float)
        if P.size != S * A * S:
            raise MdpValidationError(
                f"transitions has {P.size} entries, expected {S * A * S}", _line_of(text, "transitions")
            )
        P = P.reshape(S, A, S)
        features = np.asarray(data["features"], dtype=float)
        weights = np.asarray(data["true_weights"], dtype=float)
        mu = np.asarray(data["initial_distribution"], dtype=float)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, MdpValidationError):
            raise
        raise MdpValidationError(f"non-numeric field: {exc}") from exc
    checks = [
        ("transitions", lambda: np.all(np.abs(P.sum(axis=2) - 1.0) <= ROW_TOL) and np.all(P >= 0), "every transition row must be a probability vector"),
        ("features", lambda: features.ndim == 2 and features.shape[0] == S, f"features must be a {S} x d matrix"),
        ("true_weights", lambda: weights.ndim == 1 and features.ndim == 2 and weights.size == features.shape[1], "true_weights length must equal the feature dimension"),
        ("gamma", lambda: 0.0 <= float(data["gamma"]) < 1.0, "gamma must lie in [0, 1)"),
        ("initial_distribution", lambda: mu.size == S and np.all(mu >= 0) and abs(mu.sum() - 1) <= ROW_TOL, "initial_distribution must be a probability vector"),
        ("horizon", lambda: data.get("horizon") is None or int(data["horizon"]) >= 1, "horizon must be a positive integer or null"),
    ]
    for key, ok, msg in checks:
        if not ok():
            raise MdpValidationError(msg, _line_of(text, key))
    return Mdp(P, features, weights, float(data["gamma"]), mu, data.get("horizon"), data.get("name", "mdp"))


def mdp_to_json(mdp: Mdp) -> str:
    return json.dumps(mdp.to_dict(), indent=1)


def load_mdp(path) -> Mdp:
    with open(path) as fh:
        return mdp_from_json(fh.read())
