"""Reward learning from ranked snippet pairs.

A pair ``(worse, better)`` is scored by the summed predicted rewards of its
two snippets, ``S_w`` and ``S_b``, and contributes
``-log(exp(S_b) / (exp(S_w) + exp(S_b))) = softplus(S_w - S_b)`` to the loss.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import expit

from .errors import PreconditionError, TrainingDivergedError
from .mdp import Mdp, Trajectory, trajectory_return

LEAKY_SLOPE = 0.01


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


@dataclass
class RewardModel:
    """State reward ``R(phi(s))``: linear ``w . phi`` or a one-hidden-layer leaky-ReLU MLP."""

    kind: str
    params: dict
    slope: float = LEAKY_SLOPE

    @classmethod
    def linear(cls, weights) -> "RewardModel":
        return cls("linear", {"w": np.asarray(weights, dtype=float).copy()})

    @classmethod
    def mlp(cls, n_features: int, hidden: int = 32, rng: Optional[np.random.Generator] = None, scale: float = 0.5,
            slope: float = LEAKY_SLOPE) -> "RewardModel":
        rng = rng or np.random.default_rng(0)
        return cls("mlp", {
            "W1": rng.normal(0.0, scale / math.sqrt(n_features), (hidden, n_features)),
            "b1": rng.normal(0.0, 0.1, hidden),
            "w2": rng.normal(0.0, scale / math.sqrt(hidden), hidden),
            "b2": np.zeros(1),
        }, slope)

    @classmethod
    def zeros_like(cls, spec: "RewardModel") -> "RewardModel":
        return cls(spec.kind, {k: np.zeros_like(v) for k, v in spec.params.items()}, spec.slope)

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown reward model kind {self.kind!r}")
        self.params = {k: np.asarray(v, dtype=float) for k, v in self.params.items()}
        if self.kind == "mlp":
            h, d = self.params["W1"].shape
            if self.params["b1"].shape != (h,) or self.params["w2"].shape != (h,) or self.params["b2"].size != 1:
                raise ValueError("inconsistent MLP parameter shapes")
        for v in self.params.values():
            if not np.all(np.isfinite(v)):
                raise ValueError("reward model parameters must be finite")

    @property
    def names(self):
        return ("w",) if self.kind == "linear" else ("W1", "b1", "w2", "b2")

    def copy(self) -> "RewardModel":
        return RewardModel(self.kind, {k: v.copy() for k, v in self.params.items()}, self.slope)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.names])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        i = 0
        for k in self.names:
            n = self.params[k].size
            self.params[k] = flat[i:i + n].reshape(self.params[k].shape).copy()
            i += n
        return self

    def evaluate(self, features) -> np.ndarray:
        F = np.atleast_2d(np.asarray(features, dtype=float))
        if self.kind == "linear":
            return F @ self.params["w"]
        p = self.params
        return _leaky(F @ p["W1"].T + p["b1"], self.slope) @ p["w2"] + p["b2"][0]

    def backward(self, features, upstream) -> np.ndarray:
        """Flat gradient of ``sum_n upstream[n] * R(features[n])``."""
        F = np.atleast_2d(np.asarray(features, dtype=float))
        g = np.asarray(upstream, dtype=float)
        if self.kind == "linear":
            return g @ F
        p = self.params
        z = F @ p["W1"].T + p["b1"]
        h = _leaky(z, self.slope)
        dz = np.outer(g, p["w2"]) * np.where(z > 0, 1.0, self.slope)
        return np.concatenate([(dz.T @ F).ravel(), dz.sum(axis=0), g @ h, [g.sum()]])

    def normalized(self):
        """Linear model scaled to ``||w||_1 <= 1``; returns ``(model, scale divided out)``."""
        if self.kind != "linear":
            raise ValueError("only linear models can be normalised")
        l1 = float(np.abs(self.params["w"]).sum())
        scale = max(l1, 1.0)
        return RewardModel.linear(self.params["w"] / scale), scale

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "slope": self.slope,
            "shapes": {k: list(self.params[k].shape) for k in self.names},
            "params": self.get_flat().tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "RewardModel":
        shapes = data["shapes"]
        params = {k: np.zeros(tuple(s)) for k, s in shapes.items()}
        model = cls(data["kind"], params, data.get("slope", LEAKY_SLOPE))
        return model.set_flat(data["params"])


@dataclass
class RewardEnsemble:
    """Mean of independently trained members."""

    members: list

    kind = "ensemble"

    def evaluate(self, features) -> np.ndarray:
        return np.mean([m.evaluate(features) for m in self.members], axis=0)

    def to_dict(self) -> dict:
        return {"kind": "ensemble", "members": [m.to_dict() for m in self.members]}


def model_from_dict(data):
    if data["kind"] == "ensemble":
        return RewardEnsemble([RewardModel.from_dict(m) for m in data["members"]])
    return RewardModel.from_dict(data)


def snippet_score(model, features, mode: str = "sum", discount: float = 1.0) -> float:
    r = model.evaluate(features)
    if mode == "sum":
        return float(r.sum())
    if mode == "discounted":
        return float(np.dot(discount ** np.arange(r.size), r))
    raise ValueError(f"unknown score mode {mode!r}")


def pairwise_loss(model, worse_features, better_features) -> float:
    """Negative log-probability that the better snippet is preferred."""
    s_w = snippet_score(model, worse_features)
    s_b = snippet_score(model, better_features)
    return float(np.logaddexp(0.0, s_w - s_b))


def loss_gradient(model: RewardModel, pairs: Sequence) -> np.ndarray:
    """Mean gradient of :func:`pairwise_loss` over ``pairs`` of ``(worse_features, better_features)``."""
    if len(pairs) == 0:
        raise PreconditionError("loss gradient of an empty batch")
    grad = np.zeros(model.get_flat().size)
    for fw, fb in pairs:
        fw, fb = np.atleast_2d(fw), np.atleast_2d(fb)
        sig = float(expit(snippet_score(model, fw) - snippet_score(model, fb)))
        grad += model.backward(fw, np.full(fw.shape[0], sig)) - model.backward(fb, np.full(fb.shape[0], sig))
    return grad / len(pairs)


def batch_loss(model, features, C_worse, C_better):
    """Mean loss and per-pair score differences for count-encoded pairs."""
    r = model.evaluate(features)
    margin = C_worse @ r - C_better @ r
    return float(np.mean(np.logaddexp(0.0, margin))), margin


def batch_loss_and_grad(model: RewardModel, features, C_worse, C_better):
    """Loss and flat gradient for pairs given as state-count matrices.

    Because rewards depend on the state only, a snippet score is ``C @ r``
    with ``r`` the reward of every state, and backpropagation runs once over
    the state table.
    """
    loss, margin = batch_loss(model, features, C_worse, C_better)
    sig = expit(margin)
    upstream = sig @ (C_worse - C_better) / margin.size
    return loss, model.backward(features, upstream)


@dataclass
class OptimizerConfig:
    method: str = "sgd"
    learning_rate: float = 0.05
    batch_size: int = 64
    max_updates: int = 20_000
    eval_every: int = 200
    patience: int = 6
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    stopping_check: int = 0
    best_check: int = 0
    val_accuracy: float = float("nan")
    updates: int = 0

    def curve_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{i},{t!r},{v!r}" for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss))]
        return "\n".join(lines) + "\n"


def ranking_accuracy(model, features, C_worse, C_better) -> float:
    r = model.evaluate(features)
    return float(np.mean(C_better @ r > C_worse @ r))


def train_reward(
    features: np.ndarray,
    train: tuple,
    val: tuple,
    model: RewardModel,
    config: Optional[OptimizerConfig] = None,
    seed: int = 0,
):
    """Minibatch training with early stopping on validation loss.

    ``train`` and ``val`` are ``(C_worse, C_better)`` count matrices. The
    validation loss is checked every ``eval_every`` updates; training stops
    after ``patience`` checks without improvement and the best parameters
    are returned.
    """
    config = config or OptimizerConfig()
    Cw, Cb = train
    Vw, Vb = val
    if Cw.shape[0] < 1 or Vw.shape[0] < 1:
        raise PreconditionError("training needs at least one training and one validation pair")
    rng = np.random.default_rng(seed)
    model = model.copy()
    theta = model.get_flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    report = TrainReport()
    best_val, best_theta, stale = math.inf, theta.copy(), 0
    running, n_running = 0.0, 0
    n = Cw.shape[0]
    order = rng.permutation(n)
    cursor = 0
    for step in range(1, config.max_updates + 1):
        if cursor + config.batch_size > n:
            order, cursor = rng.permutation(n), 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        loss, grad = batch_loss_and_grad(model, features, Cw[idx], Cb[idx])
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(f"loss became non-finite at update {step}", best_theta)
        grad = grad + config.weight_decay * theta
        if config.method == "adam":
            m = config.beta1 * m + (1 - config.beta1) * grad
            v = config.beta2 * v + (1 - config.beta2) * grad**2
            m_hat = m / (1 - config.beta1**step)
            v_hat = v / (1 - config.beta2**step)
            theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
        elif config.method == "sgd":
            theta = theta - config.learning_rate * grad
        else:
            raise ValueError(f"unknown optimiser {config.method!r}")
        model.set_flat(theta)
        running += loss
        n_running += 1
        if step % config.eval_every == 0 or step == config.max_updates:
            val_loss, _ = batch_loss(model, features, Vw, Vb)
            if not math.isfinite(val_loss):
                raise TrainingDivergedError(f"validation loss became non-finite at update {step}", best_theta)
            report.train_loss.append(running / n_running)
            report.val_loss.append(val_loss)
            running, n_running = 0.0, 0
            if val_loss < best_val:
                best_val, best_theta, stale = val_loss, theta.copy(), 0
                report.best_check = len(report.val_loss) - 1
            else:
                stale += 1
            if stale >= config.patience:
                break
    report.updates = step
    report.stopping_check = len(report.val_loss) - 1
    model.set_flat(best_theta)
    report.val_accuracy = ranking_accuracy(model, features, Vw, Vb)
    return model, report


def train_ensemble(features, train, val, spec: RewardModel, config=None, seed=0, k=1, init=None):
    """Train ``k`` independently seeded members; a single model when ``k == 1``.

    ``init(rng)`` builds a fresh member; by default every member starts from ``spec``.
    """
    children = np.random.SeedSequence(seed).spawn(k)
    members, reports = [], []
    for ss in children:
        rng = np.random.default_rng(ss)
        start = init(rng) if init is not None else spec
        model, report = train_reward(features, train, val, start, config, int(rng.integers(2**31)))
        members.append(model)
        reports.append(report)
    if k == 1:
        return members[0], reports
    return RewardEnsemble(members), reports


def predicted_return(model, traj: Trajectory, features, mode: str = "sum", discount: float = 1.0) -> float:
    return snippet_score(model, np.asarray(features)[traj.states], mode, discount)


def _corr(fn, x, y):
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(fn(x, y)[0])


@dataclass
class ExtrapolationReport:
    rows: list  # (set name, ground-truth return, predicted return, normalised prediction)
    pearson: dict
    spearman: dict

    def csv(self) -> str:
        lines = ["set,true_return,predicted_return,normalized_predicted"]
        lines += [f"{s},{t!r},{p!r},{q!r}" for s, t, p, q in self.rows]
        return "\n".join(lines) + "\n"

    def correlation_csv(self) -> str:
        def fmt(v):
            return "undefined" if v is None else repr(v)

        lines = ["set,pearson,spearman"]
        lines += [f"{k},{fmt(self.pearson[k])},{fmt(self.spearman[k])}" for k in self.pearson]
        return "\n".join(lines) + "\n"


def extrapolation_report(model, mdp: Mdp, sets: Mapping[str, Sequence[Trajectory]], mode: str = "sum") -> ExtrapolationReport:
    """Ground-truth vs predicted returns per trajectory set, with correlations.

    Predictions are min-max rescaled onto the pooled ground-truth range.
    Constant predictions leave the correlation undefined (``None``).
    """
    r_true = mdp.true_reward()
    names, truth, pred = [], [], []
    for name, trajs in sets.items():
        if len(trajs) == 0:
            raise PreconditionError(f"trajectory set {name!r} is empty")
        for t in trajs:
            names.append(name)
            truth.append(trajectory_return(t, r_true, mdp.discount))
            pred.append(predicted_return(model, t, mdp.features, mode, mdp.discount))
    truth, pred = np.array(truth), np.array(pred)
    if np.ptp(pred) > 0:
        norm = truth.min() + (pred - pred.min()) / np.ptp(pred) * np.ptp(truth)
    else:
        norm = np.full_like(pred, truth.mean())
    names_arr = np.array(names)
    pearson, spearman = {}, {}
    for name in list(sets) + ["pooled"]:
        sel = np.ones(len(names), bool) if name == "pooled" else names_arr == name
        pearson[name] = _corr(stats.pearsonr, truth[sel], pred[sel])
        spearman[name] = _corr(stats.spearmanr, truth[sel], pred[sel])
    rows = [(n, float(t), float(p), float(q)) for n, t, p, q in zip(names, truth, pred, norm)]
    return ExtrapolationReport(rows, pearson, spearman)
