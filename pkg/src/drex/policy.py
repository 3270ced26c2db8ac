"""Tabular stochastic policies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROVENANCES = ("optimal", "truncated", "cloned", "epsilon-wrapped", "learned", "demonstrator", "uniform", "other")

ROW_TOL = 1e-9


@dataclass
class Policy:
    """Action distribution ``probs[s, a]`` for every state."""

    probs: np.ndarray
    provenance: str = "other"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2:
            raise ValueError(f"policy matrix must be 2-D, got shape {self.probs.shape}")
        if np.any(self.probs < 0) or not np.all(np.isfinite(self.probs)):
            raise ValueError("policy probabilities must be finite and non-negative")
        bad = np.abs(self.probs.sum(axis=1) - 1.0) > ROW_TOL
        if np.any(bad):
            raise ValueError(f"policy rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def greedy_actions(self) -> np.ndarray:
        # np.argmax returns the first maximiser, i.e. the lowest action index
        return np.argmax(self.probs, axis=1)

    def is_deterministic(self) -> bool:
        return bool(np.all(self.probs.max(axis=1) == 1.0))

    @classmethod
    def deterministic(cls, actions, n_actions, provenance="other", **info) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs, provenance, dict(info))

    @classmethod
    def uniform(cls, n_states, n_actions) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions), "uniform")

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "provenance": self.provenance,
            "action_probs": self.probs.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "Policy":
        probs = np.asarray(data["action_probs"], dtype=float).reshape(data["n_states"], data["n_actions"])
        return cls(probs, data.get("provenance", "other"))


def as_probs(policy) -> np.ndarray:
    """Accept either a :class:`Policy` or a raw probability matrix."""
    if isinstance(policy, Policy):
        return policy.probs
    return np.asarray(policy, dtype=float)
