"""Reward ambiguity: half-space constraints on linear reward weights and their volume.

Every preference ``better > worse`` with feature expectations ``Phi`` gives
the half-space ``w . (Phi_better - Phi_worse) >= 0``. The ambiguity of a
constraint set is the fraction of the unit ball (l2 or l1) satisfying all of
them, estimated by Monte Carlo.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import PreconditionError
from .mdp import Mdp, policy_feature_expectations, policy_return
from .solvers import value_iteration

STRICT_MARGIN = 1e-9
CHUNK = 25_000


@dataclass(frozen=True)
class HalfspaceConstraint:
    normal: np.ndarray
    strict: bool = False

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).ravel()
        if not np.all(np.isfinite(n)):
            raise ValueError("constraint normal must be finite")
        if not np.any(n):
            raise ValueError("constraint normal must be non-zero")
        object.__setattr__(self, "normal", n)

    def satisfied(self, W: np.ndarray) -> np.ndarray:
        """Membership of each row of ``W``; strict constraints need a margin of 1e-9."""
        values = W @ self.normal
        return values >= STRICT_MARGIN if self.strict else values >= 0.0


@dataclass
class AmbiguityProblem:
    dimension: int
    constraints: list = field(default_factory=list)
    ball: str = "l2"

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")
        if self.ball not in ("l2", "l1"):
            raise ValueError(f"unknown ball {self.ball!r}")
        for c in self.constraints:
            if c.normal.size != self.dimension:
                raise ValueError("constraint dimension mismatch")

    def feasible(self, W: np.ndarray) -> np.ndarray:
        ok = np.ones(W.shape[0], dtype=bool)
        for c in self.constraints:
            ok &= c.satisfied(W)
        return ok


class DegenerateConstraintWarning(UserWarning):
    pass


def constraints_from_ranking(features: Sequence, mode: str = "adjacent", strict: bool = False) -> list:
    """Half-spaces from items ordered worst to best by their feature expectations.

    ``mode="adjacent"`` links consecutive items, ``"all-pairs"`` every
    ordered pair. Pairs with identical features carry no information and
    are dropped with a warning.
    """
    Phi = [np.asarray(f, dtype=float).ravel() for f in features]
    if len(Phi) < 2:
        raise PreconditionError("a ranking needs at least two items")
    if mode == "adjacent":
        pairs = [(i, i + 1) for i in range(len(Phi) - 1)]
    elif mode == "all-pairs":
        pairs = [(i, j) for i in range(len(Phi)) for j in range(i + 1, len(Phi))]
    else:
        raise ValueError(f"unknown ranking mode {mode!r}")
    out = []
    for worse, better in pairs:
        normal = Phi[better] - Phi[worse]
        if not np.any(normal):
            warnings.warn(f"items {worse} and {better} have identical features; constraint dropped",
                          DegenerateConstraintWarning, stacklevel=2)
            continue
        out.append(HalfspaceConstraint(normal, strict))
    return out


def sample_ball(n: int, d: int, rng: np.random.Generator, ball: str = "l2") -> np.ndarray:
    """Uniform samples from the unit l2 or l1 ball in ``d`` dimensions."""
    if ball == "l2":
        x = rng.standard_normal((n, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return x * rng.random(n)[:, None] ** (1.0 / d)
    if ball == "l1":
        # first d coordinates of a uniform point on the (d+1)-simplex fill the positive orthant of the l1 ball
        e = rng.exponential(size=(n, d + 1))
        x = e[:, :d] / e.sum(axis=1, keepdims=True)
        return x * rng.choice([-1.0, 1.0], size=(n, d))
    raise ValueError(f"unknown ball {ball!r}")


def sample_sphere(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _chunked_samples(problem: AmbiguityProblem, n_samples: int, seed: int, workers: int):
    """Yield ball samples in fixed chunks with per-chunk seeds (independent of ``workers``)."""
    sizes = [CHUNK] * (n_samples // CHUNK)
    if n_samples % CHUNK:
        sizes.append(n_samples % CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def draw(i):
        return sample_ball(sizes[i], problem.dimension, np.random.default_rng(seeds[i]), problem.ball)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(draw, range(len(sizes)))
    else:
        for i in range(len(sizes)):
            yield draw(i)


def estimate_volume(problem: AmbiguityProblem, n_samples: int = 100_000, seed: int = 0, workers: int = 1):
    """Fraction of the ball satisfying every constraint, and its binomial standard error."""
    if n_samples < 1000:
        raise PreconditionError("estimate_volume needs at least 1000 samples")
    if not problem.constraints:
        return 1.0, 0.0
    hits = 0
    for W in _chunked_samples(problem, n_samples, seed, workers):
        hits += int(problem.feasible(W).sum())
    p = hits / n_samples
    return p, math.sqrt(p * (1.0 - p) / n_samples)


def paired_volumes(problems: Sequence[AmbiguityProblem], n_samples: int = 100_000, seed: int = 0):
    """Estimate several problems on one shared sample set.

    Returns ``(fractions, feasibility masks)``; nested constraint sets then
    give nested masks sample by sample.
    """
    d = problems[0].dimension
    ball = problems[0].ball
    if any(p.dimension != d or p.ball != ball for p in problems):
        raise ValueError("paired problems must share dimension and ball")
    W = np.concatenate(list(_chunked_samples(problems[0], n_samples, seed, 1)))
    masks = [p.feasible(W) for p in problems]
    return [float(m.mean()) for m in masks], masks


@dataclass
class Prop2Result:
    optimal_volume: float
    ranked_volume: float
    optimal_mask: np.ndarray
    ranked_mask: np.ndarray
    n_optimal_constraints: int
    n_ranked_constraints: int

    @property
    def subset_holds(self) -> bool:
        """Every sample feasible for the ranking is feasible for the optimal-policy set."""
        return bool(np.all(~self.ranked_mask | self.optimal_mask))


def prop2_compare(mdp: Mdp, ranking: Sequence, n_samples: int = 100_000, seed: int = 0, ball: str = "l2",
                  horizon: Optional[int] = None) -> Prop2Result:
    """Ambiguity of "the top policy is optimal" versus the full ranking.

    ``ranking`` lists policies from worst to best and must end with an
    optimal policy. The optimal-policy set constrains the top policy against
    every other; the ranked set adds all remaining ordered pairs.
    """
    if len(ranking) < 1:
        raise PreconditionError("ranking is empty")
    _, best = value_iteration(mdp)
    j_best = policy_return(mdp, best, horizon=horizon)
    top = policy_return(mdp, ranking[-1], horizon=horizon)
    if top < j_best - 1e-9 * (1 + abs(j_best)):
        raise PreconditionError(f"the top-ranked policy (J={top:.6g}) is not optimal (J*={j_best:.6g})")
    Phi = [policy_feature_expectations(p, mdp, horizon) for p in ranking]
    d = mdp.n_features

    def keep(normal):
        return np.any(np.abs(normal) > 0)

    optimal = [HalfspaceConstraint(Phi[-1] - Phi[i]) for i in range(len(Phi) - 1) if keep(Phi[-1] - Phi[i])]
    ranked = [
        HalfspaceConstraint(Phi[j] - Phi[i])
        for i in range(len(Phi)) for j in range(i + 1, len(Phi)) if keep(Phi[j] - Phi[i])
    ]
    p_opt = AmbiguityProblem(d, optimal, ball)
    p_rank = AmbiguityProblem(d, ranked, ball)
    (v_opt, v_rank), (m_opt, m_rank) = paired_volumes([p_opt, p_rank], n_samples, seed)
    return Prop2Result(v_opt, v_rank, m_opt, m_rank, len(optimal), len(ranked))


def corollary1_k(x_percent: float):
    """Random half-spaces needed to cut ``x`` percent of the hypotheses: ``log2(1 / (1 - x/100))``.

    Returns ``(k, ceil(k))``.
    """
    if not 0.0 <= x_percent < 100.0:
        raise ValueError(f"x must lie in [0, 100), got {x_percent}")
    k = math.log2(1.0 / (1.0 - x_percent / 100.0))
    return k, math.ceil(k)


@dataclass
class EliminationResult:
    mean_remaining: np.ndarray  # index k = after k constraints
    std_error: np.ndarray
    survival_fraction: np.ndarray  # mean per-step survivor ratio, steps 1..k
    survival_std_error: np.ndarray
    J0: int
    n_trials: int

    @property
    def predicted(self) -> np.ndarray:
        return self.J0 / 2.0 ** np.arange(self.mean_remaining.size)

    def csv(self) -> str:
        lines = ["k,mean_remaining,std_error,predicted_J0_over_2k"]
        lines += [f"{k},{float(m)!r},{float(s)!r},{float(p)!r}" for k, (m, s, p) in
                  enumerate(zip(self.mean_remaining, self.std_error, self.predicted))]
        return "\n".join(lines) + "\n"


def hypothesis_elimination_sim(J0: int, d: int, k: int, seed: int = 0, n_trials: int = 200, ball: str = "l2") -> EliminationResult:
    """Eliminate uniformly drawn hypotheses with uniformly random half-spaces.

    A hypothesis ``w`` is eliminated by normal ``x`` when ``w . x <= 0``.
    """
    if J0 < 2:
        raise PreconditionError("J0 must be at least 2")
    rng = np.random.default_rng(seed)
    remaining = np.empty((n_trials, k + 1))
    ratios = np.full((n_trials, k), np.nan)
    for trial in range(n_trials):
        H = sample_ball(J0, d, rng, ball)
        alive = np.ones(J0, dtype=bool)
        remaining[trial, 0] = J0
        X = sample_sphere(k, d, rng)
        for step in range(k):
            before = alive.sum()
            alive &= H @ X[step] > 0.0
            remaining[trial, step + 1] = alive.sum()
            if before:
                ratios[trial, step] = alive.sum() / before
    se = remaining.std(axis=0, ddof=1) / math.sqrt(n_trials)
    valid = ~np.isnan(ratios)
    counts = valid.sum(axis=0)
    surv = np.nanmean(ratios, axis=0) if k else np.zeros(0)
    surv_se = np.nanstd(ratios, axis=0, ddof=1) / np.sqrt(np.maximum(counts, 1)) if k else np.zeros(0)
    return EliminationResult(remaining.mean(axis=0), se, surv, surv_se, J0, n_trials)


def recurrence(J0: float, X: float, k: int, simplified: bool = True):
    """Iterate the unique-hypothesis and multiset recurrences for ``k`` steps.

    The simplified system starts from ``T_0 = J_0 X / 2`` and divides by
    ``X`` at every step; its closed form is ``J_k = J_0 / 2^k``,
    ``T_k = J_0 X / 2^(k+1)``. The unsimplified system divides by ``X - k``.
    """
    J = [float(J0)]
    T = [J0 * X / 2.0]
    for step in range(k):
        denom = X if simplified else X - step
        J.append(J[-1] - T[-1] / denom)
        T.append(T[-1] - T[-1] ** 2 / (J[-2] * denom))
    return np.array(J), np.array(T)


def ambiguity_sweep(d: int, max_constraints: int, n_samples: int = 100_000, seed: int = 0, ball: str = "l2",
                    normals: Optional[np.ndarray] = None):
    """Volume fraction after each of ``0..max_constraints`` random half-spaces (shared samples).

    Returns rows ``(n_constraints, volume_fraction, std_err)``.
    """
    rng = np.random.default_rng(seed)
    if normals is None:
        normals = sample_sphere(max_constraints, d, rng)
    W = sample_ball(n_samples, d, rng, ball)
    alive = np.ones(n_samples, dtype=bool)
    rows = [(0, 1.0, 0.0)]
    for i in range(max_constraints):
        alive &= W @ normals[i] >= 0.0
        p = float(alive.mean())
        rows.append((i + 1, p, math.sqrt(p * (1 - p) / n_samples)))
    return rows


def sweep_csv(rows) -> str:
    lines = ["n_constraints,volume_fraction,std_err"]
    lines += [f"{n},{v!r},{s!r}" for n, v, s in rows]
    return "\n".join(lines) + "\n"
