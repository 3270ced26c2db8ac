"""Automatically ranked trajectory sets and snippet-pair sampling.

Trajectories rolled out with more noise are ranked below those rolled out
with less; rollouts sharing a noise level are never compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InsufficientLevelsError, PreconditionError
from .mdp import Trajectory

DEFAULT_N_PAIRS = 40_000
DEFAULT_L_MIN = 10
DEFAULT_L_MAX = 50


@dataclass
class RankedDataset:
    """Trajectories grouped by ranking key, plus every admissible preference pair.

    ``keys[i]`` is the noise level that produced trajectory ``i`` (``inf``
    for the optional no-op group). A row ``(i, j)`` of ``pairs`` means
    trajectory ``i`` is worse than trajectory ``j``.
    """

    trajectories: list
    keys: np.ndarray
    pairs: np.ndarray
    min_gap: float = 0.0

    @property
    def levels(self) -> list:
        return sorted(set(self.keys.tolist()), reverse=True)

    def members(self, key) -> np.ndarray:
        return np.flatnonzero(self.keys == key)

    def to_dict(self) -> dict:
        return {
            "min_gap": self.min_gap,
            "keys": [k if math.isfinite(k) else "inf" for k in self.keys.tolist()],
            "trajectories": [t.to_dict() for t in self.trajectories],
            "pairs": self.pairs.tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "RankedDataset":
        keys = np.array([math.inf if k == "inf" else float(k) for k in data["keys"]])
        pairs = np.asarray(data["pairs"], dtype=int).reshape(-1, 2)
        trajs = [Trajectory.from_dict(t) for t in data["trajectories"]]
        return cls(trajs, keys, pairs, float(data["min_gap"]))


def build_ranked_dataset(groups: Mapping[float, Sequence[Trajectory]], min_gap: float = 0.0) -> RankedDataset:
    """All cross-level pairs whose noise difference exceeds ``min_gap``."""
    levels = [k for k in groups if len(groups[k]) > 0]
    if len(levels) < 2:
        raise InsufficientLevelsError(f"ranking needs at least two noise levels, got {len(levels)}")
    ordered = sorted(levels, reverse=True)
    trajs, keys = [], []
    for k in ordered:
        trajs.extend(groups[k])
        keys.extend([float(k)] * len(groups[k]))
    keys = np.asarray(keys)
    idx = np.arange(keys.size)
    worse, better = np.meshgrid(idx, idx, indexing="ij")
    with np.errstate(invalid="ignore"):
        diff = keys[worse] - keys[better]
    mask = diff > min_gap
    pairs = np.stack([worse[mask], better[mask]], axis=1)
    return RankedDataset(trajs, keys, pairs, float(min_gap))


@dataclass
class SnippetPair:
    worse: int  # trajectory index
    better: int
    worse_start: int
    better_start: int
    worse_len: int
    better_len: int

    def states(self, ds: RankedDataset):
        w = ds.trajectories[self.worse].states[self.worse_start:self.worse_start + self.worse_len]
        b = ds.trajectories[self.better].states[self.better_start:self.better_start + self.better_len]
        return w, b


@dataclass
class SnippetBatch:
    """Column-oriented collection of snippet pairs."""

    worse: np.ndarray
    better: np.ndarray
    worse_start: np.ndarray
    better_start: np.ndarray
    worse_len: np.ndarray
    better_len: np.ndarray

    def __len__(self):
        return int(self.worse.size)

    def __getitem__(self, i) -> SnippetPair:
        return SnippetPair(*(int(getattr(self, f)[i]) for f in _FIELDS))

    def subset(self, idx) -> "SnippetBatch":
        return SnippetBatch(*(getattr(self, f)[idx] for f in _FIELDS))

    def state_counts(self, ds: RankedDataset, n_states: int):
        """Per-pair visit counts ``(C_worse, C_better)``, each of shape ``(n, n_states)``.

        Snippet scores of a state-reward model are ``C @ r``.
        """
        return (
            _counts(ds, self.worse, self.worse_start, self.worse_len, n_states),
            _counts(ds, self.better, self.better_start, self.better_len, n_states),
        )

    def to_dict(self) -> dict:
        return {f: getattr(self, f).tolist() for f in _FIELDS}

    @classmethod
    def from_dict(cls, data) -> "SnippetBatch":
        return cls(*(np.asarray(data[f], dtype=int) for f in _FIELDS))


_FIELDS = ("worse", "better", "worse_start", "better_start", "worse_len", "better_len")


def _counts(ds, traj_idx, starts, lengths, n_states):
    out = np.zeros((traj_idx.size, n_states))
    for row, (t, s0, n) in enumerate(zip(traj_idx, starts, lengths)):
        np.add.at(out[row], ds.trajectories[t].states[s0:s0 + n], 1.0)
    return out


def whole_trajectory_pairs(ds: RankedDataset) -> SnippetBatch:
    """Every ranked pair, using full trajectories as snippets."""
    lengths = np.array([len(t) for t in ds.trajectories])
    w, b = ds.pairs[:, 0], ds.pairs[:, 1]
    zeros = np.zeros(w.size, dtype=int)
    return SnippetBatch(w, b, zeros, zeros.copy(), lengths[w], lengths[b])


def sample_snippet_pairs(
    ds: RankedDataset,
    n_pairs: int = DEFAULT_N_PAIRS,
    L_min: int = DEFAULT_L_MIN,
    L_max: int = DEFAULT_L_MAX,
    progress: bool = True,
    seed: int = 0,
    equal_length: bool = True,
) -> SnippetBatch:
    """Random cropped snippet pairs from two distinct, sufficiently separated levels.

    Each draw picks an admissible pair of levels, one trajectory from each,
    and a crop length in ``[L_min, L_max]`` (shared by both snippets unless
    ``equal_length`` is off). With ``progress`` the lower-noise snippet
    starts no earlier than the higher-noise one. Draws whose trajectories
    are too short are discarded and redrawn.
    """
    if L_min < 1 or L_max < L_min:
        raise PreconditionError(f"invalid snippet length range [{L_min}, {L_max}]")
    rng = np.random.default_rng(seed)
    lengths = np.array([len(t) for t in ds.trajectories])
    levels = ds.levels
    members = {k: ds.members(k) for k in levels}
    valid = {k: m[lengths[m] >= L_min] for k, m in members.items()}
    level_pairs = [
        (hi, lo) for hi in levels for lo in levels
        if (hi - lo) > ds.min_gap and valid[hi].size and valid[lo].size
    ]
    if not level_pairs:
        raise PreconditionError(f"no pair of levels has trajectories of length >= {L_min}")
    cols = {f: [] for f in _FIELDS}
    have = 0
    while have < n_pairs:
        m = n_pairs - have
        choice = rng.integers(len(level_pairs), size=m)
        u = rng.random((5, m))
        for i in range(m):
            hi, lo = level_pairs[choice[i]]
            tw = valid[hi][int(u[0, i] * valid[hi].size)]
            tb = valid[lo][int(u[1, i] * valid[lo].size)]
            nw, nb = lengths[tw], lengths[tb]
            top = min(L_max, nw, nb) if equal_length else min(L_max, nw)
            lw = L_min + int(u[2, i] * (top - L_min + 1))
            lb = lw if equal_length else L_min + int(u[3, i] * (min(L_max, nb) - L_min + 1))
            sw = int(u[3, i] * (nw - lw + 1)) if equal_length else int(u[4, i] * (nw - lw + 1))
            if progress:
                if nb - lb < sw:
                    continue  # no admissible later start in the better trajectory
                sb = sw + int(u[4, i] * (nb - lb - sw + 1))
            else:
                sb = int(u[4, i] * (nb - lb + 1))
            for f, v in zip(_FIELDS, (tw, tb, sw, sb, lw, lb)):
                cols[f].append(v)
            have += 1
    return SnippetBatch(*(np.asarray(cols[f], dtype=int) for f in _FIELDS))


def split_pairs(batch: SnippetBatch, val_fraction: float = 0.2, seed: int = 0):
    """Shuffle and split into training and validation batches."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(batch))
    n_val = int(round(val_fraction * len(batch)))
    if len(batch) >= 2:
        n_val = min(max(n_val, 1), len(batch) - 1)
    return batch.subset(order[n_val:]), batch.subset(order[:n_val])


def label_agreement(ds: RankedDataset, true_reward: np.ndarray, discount: float = 1.0, batch: Optional[SnippetBatch] = None) -> float:
    """Fraction of noise-derived labels that ground-truth returns agree with."""
    batch = whole_trajectory_pairs(ds) if batch is None else batch
    agree = 0
    for i in range(len(batch)):
        w, b = batch[i].states(ds)
        rw = np.dot(discount ** np.arange(w.size), true_reward[w])
        rb = np.dot(discount ** np.arange(b.size), true_reward[b])
        agree += rb > rw
    return agree / max(len(batch), 1)
