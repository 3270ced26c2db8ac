"""Built-in environments: two gridworlds and the four-state ranking counterexample."""

from __future__ import annotations

import numpy as np

from .mdp import Mdp

# action 0 idles; the lowest-index tie-break therefore idles under a flat reward
ACTIONS = ("stay", "up", "down", "left", "right")
MOVES = {0: (0, 0), 1: (-1, 0), 2: (1, 0), 3: (0, -1), 4: (0, 1)}

TERRAIN_LAYOUT = (
    "..wwwwww",
    "w..wwwww",
    "gw..wwww",
    "ggw..www",
    "mggw..ww",
    "mmggw..w",
    "mmmggw..",
    "mmmmggwG",
)
TERRAIN_TYPES = ".gmw"  # road, grass, mud, water
TERRAIN_WEIGHTS = (-0.02, -0.1, -0.3, -0.6, 1.0)  # road, grass, mud, water, goal

LAVA_LAYOUT = (
    "..LLL",
    "L..LL",
    "LL..L",
    "LLL..",
    "LLLLG",
)
LAVA_WEIGHTS = (-0.05, -1.0, 1.0)  # plain, lava, goal


def _grid_transitions(layout, slip: float) -> np.ndarray:
    n_rows, n_cols = len(layout), len(layout[0])
    S, A = n_rows * n_cols, len(ACTIONS)
    P = np.zeros((S, A, S))

    def target(r, c, a):
        dr, dc = MOVES[a]
        rr, cc = r + dr, c + dc
        if 0 <= rr < n_rows and 0 <= cc < n_cols:
            return rr * n_cols + cc
        return r * n_cols + c

    for r in range(n_rows):
        for c in range(n_cols):
            s = r * n_cols + c
            if layout[r][c] == "G":
                P[s, :, s] = 1.0
                continue
            P[s, 0, s] = 1.0
            for a in range(1, A):
                P[s, a, target(r, c, a)] += 1.0 - slip
                # a slip moves in one of the four directions uniformly at random
                for b in range(1, A):
                    P[s, a, target(r, c, b)] += slip / (A - 1)
    return P


def gridworld(layout, cell_features, weights, discount, horizon, slip=0.0, start=(0, 0), name="grid") -> Mdp:
    n_rows, n_cols = len(layout), len(layout[0])
    features = np.array([cell_features(ch) for row in layout for ch in row], dtype=float)
    mu = np.zeros(n_rows * n_cols)
    mu[start[0] * n_cols + start[1]] = 1.0
    return Mdp(
        _grid_transitions(layout, slip), features, np.asarray(weights, dtype=float), discount, mu, horizon, name,
        meta={"layout": list(layout), "shape": (n_rows, n_cols), "actions": list(ACTIONS), "stay_action": 0},
    )


def terrain_gridworld(slip: float = 0.1, discount: float = 0.95, horizon: int = 40) -> Mdp:
    """8x8 grid with one-hot terrain features plus a goal indicator (d = 5)."""

    def cell(ch):
        phi = np.zeros(5)
        phi[0 if ch == "G" else TERRAIN_TYPES.index(ch)] = 1.0
        phi[4] = ch == "G"
        return phi

    return gridworld(TERRAIN_LAYOUT, cell, TERRAIN_WEIGHTS, discount, horizon, slip, name="terrain")


def lava_gridworld(discount: float = 0.95, horizon: int = 20) -> Mdp:
    """Deterministic 5x5 grid: plain cells cost a little, lava a lot, the goal pays."""

    def cell(ch):
        # the goal cell is plain ground as well
        return np.array([ch in ".G", ch == "L", ch == "G"], dtype=float)

    return gridworld(LAVA_LAYOUT, cell, LAVA_WEIGHTS, discount, horizon, 0.0, name="lava")


def prop1_mdp(delta: float = 10.0, discount: float = 0.9, horizon: int = 10) -> Mdp:
    """Four states, three actions ``a, b, c``; from ``s0`` they lead to ``s1, s2, s3``.

    ``s1 .. s3`` are absorbing. The true reward is ``(0, 1, 0, -delta)`` on
    one-hot state features, so ``a`` is optimal, ``b`` is harmless and ``c``
    is a disaster.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    P = np.zeros((4, 3, 4))
    for a in range(3):
        P[0, a, a + 1] = 1.0
        for s in (1, 2, 3):
            P[s, a, s] = 1.0
    mu = np.array([1.0, 0.0, 0.0, 0.0])
    return Mdp(P, np.eye(4), np.array([0.0, 1.0, 0.0, -delta]), discount, mu, horizon, "prop1",
               meta={"actions": ["a", "b", "c"], "delta": delta})


BUILTIN = {
    "terrain": terrain_gridworld,
    "lava": lava_gridworld,
    "prop1": prop1_mdp,
}


def make_env(name: str, **kwargs) -> Mdp:
    try:
        return BUILTIN[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown built-in environment {name!r}; choose from {sorted(BUILTIN)}") from None
