import numpy as np
import pytest

from drex.mdp import Mdp


def chain_mdp(discount=0.9, horizon=None, slip=0.2):
    """Three states in a row, actions left/right, reward grows to the right."""
    P = np.zeros((3, 2, 3))
    for s in range(3):
        left, right = max(s - 1, 0), min(s + 1, 2)
        P[s, 0, left] += 1 - slip
        P[s, 0, right] += slip
        P[s, 1, right] += 1 - slip
        P[s, 1, left] += slip
    F = np.eye(3)
    w = np.array([-0.3, 0.1, 0.6])
    mu = np.array([0.5, 0.5, 0.0])
    return Mdp(P, F, w, discount, mu, horizon, "chain")


def random_mdp(rng, S=4, A=3, d=3, discount=0.9, horizon=None):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    F = rng.random((S, d))
    w = rng.standard_normal(d)
    mu = rng.dirichlet(np.ones(S))
    return Mdp(P, F, w / np.abs(w).sum(), discount, mu, horizon, "random")


@pytest.fixture
def chain():
    return chain_mdp()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
