"""Config-driven end-to-end runner: demonstrations, cloning, noise injection,
automatic ranking, reward learning, policy optimisation and evaluation.

Every stage reads and writes plain JSON so it can be replayed on its own;
all randomness flows from one run seed through named stage seeds.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .ambiguity import AmbiguityProblem, constraints_from_ranking, estimate_volume, hypothesis_elimination_sim, sweep_csv
from .cloning import (
    ClonedPolicy,
    DemonstratorSpec,
    NoiseSchedule,
    behavioral_cloning,
    degradation_csv,
    degradation_curve,
    epsilon_greedy_wrap,
    generate_demonstrations,
    noisy_rollouts,
    noop_trajectories,
)
from .envs import make_env
from .errors import DrexError, PreconditionError, StageError
from .mdp import Mdp, Trajectory, load_mdp, rollout, trajectory_feature_counts, trajectory_return
from .policy import Policy
from .ranking import RankedDataset, SnippetBatch, build_ranked_dataset, sample_snippet_pairs, split_pairs
from .reward import OptimizerConfig, RewardModel, extrapolation_report, model_from_dict, train_ensemble
from .solvers import QLearningConfig, optimize_on_learned_reward, value_iteration

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- config


@dataclass
class EnvSpec:
    name: Optional[str] = "terrain"  # built-in environment
    path: Optional[str] = None  # or an MDP JSON file
    kwargs: dict = field(default_factory=dict)


@dataclass
class NoiseSpec:
    n_levels: int = 20
    rollouts_per_level: int = 5
    levels: Optional[list] = None  # explicit schedule, overrides n_levels
    curve_rollouts: int = 500
    include_noop: bool = False
    noop_count: int = 5


@dataclass
class RankingSpec:
    n_pairs: int = 40_000
    L_min: int = 10
    L_max: int = 50
    progress: bool = True
    equal_length: bool = True
    min_gap: float = 0.0
    val_fraction: float = 0.2


@dataclass
class RewardSpec:
    kind: str = "linear"
    hidden: int = 32
    ensemble: int = 1


@dataclass
class CloneSpec:
    model: str = "tabular"
    alpha: float = 1e-3


@dataclass
class RLSpec:
    method: str = "exact-vi"
    sigmoid: Optional[bool] = None
    qlearning: QLearningConfig = field(default_factory=QLearningConfig)


@dataclass
class EvalSpec:
    rollouts: int = 200
    better_rollouts: int = 20
    ambiguity: bool = False
    ambiguity_samples: int = 100_000


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    demonstrator: DemonstratorSpec = field(default_factory=DemonstratorSpec)
    clone: CloneSpec = field(default_factory=CloneSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    ranking: RankingSpec = field(default_factory=RankingSpec)
    reward: RewardSpec = field(default_factory=RewardSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    rl: RLSpec = field(default_factory=RLSpec)
    evaluation: EvalSpec = field(default_factory=EvalSpec)
    seeds: list = field(default_factory=lambda: [0])
    policy_seeds: list = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "drex-out"
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if not self.seeds:
            raise PreconditionError("config needs at least one seed")
        if not self.policy_seeds:
            raise PreconditionError("config needs at least one policy seed")
        if (self.env.name is None) == (self.env.path is None):
            raise PreconditionError("set exactly one of env.name and env.path")
        if self.reward.kind not in ("linear", "mlp"):
            raise PreconditionError(f"unknown reward kind {self.reward.kind!r}")
        if self.reward.ensemble < 1:
            raise PreconditionError("reward.ensemble must be at least 1")
        if self.rl.method not in ("exact-vi", "q-learning"):
            raise PreconditionError(f"unknown RL method {self.rl.method!r}")
        if self.clone.model not in ("tabular", "softmax-linear"):
            raise PreconditionError(f"unknown cloning model {self.clone.model!r}")
        if self.workers < 1:
            raise PreconditionError("workers must be at least 1")
        self.schedule()
        return self

    def schedule(self) -> NoiseSchedule:
        if self.noise.levels is not None:
            return NoiseSchedule(tuple(self.noise.levels), self.noise.rollouts_per_level)
        return NoiseSchedule.evenly_spaced(self.noise.n_levels, self.noise.rollouts_per_level)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "config").validate()

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


_NESTED = {
    ("ExperimentConfig", "env"): EnvSpec,
    ("ExperimentConfig", "demonstrator"): DemonstratorSpec,
    ("ExperimentConfig", "clone"): CloneSpec,
    ("ExperimentConfig", "noise"): NoiseSpec,
    ("ExperimentConfig", "ranking"): RankingSpec,
    ("ExperimentConfig", "reward"): RewardSpec,
    ("ExperimentConfig", "optimizer"): OptimizerConfig,
    ("ExperimentConfig", "rl"): RLSpec,
    ("ExperimentConfig", "evaluation"): EvalSpec,
    ("RLSpec", "qlearning"): QLearningConfig,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise PreconditionError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise PreconditionError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls.__name__, key))
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub is not None else value
    return cls(**kwargs)


def _gridworld_config(env: str, demo_eps: float, L_min: int, L_max: int) -> ExperimentConfig:
    return ExperimentConfig(
        env=EnvSpec(env),
        demonstrator=DemonstratorSpec("epsilon-perturbed-optimal", demo_eps, 10),
        ranking=RankingSpec(L_min=L_min, L_max=L_max, progress=False),
    )


def default_config(env: str = "terrain") -> ExperimentConfig:
    """Tuned defaults for each built-in environment."""
    if env == "terrain":
        return _gridworld_config("terrain", 0.5, 5, 10)
    if env == "lava":
        return _gridworld_config("lava", 0.3, 5, 10)
    if env == "prop1":
        return _gridworld_config("prop1", 0.5, 3, 6)
    raise PreconditionError(f"no default config for environment {env!r}")


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_json(Path(path).read_text())


# --------------------------------------------------------------------------- helpers


def stage_seed(seed: int, stage: str) -> int:
    """Stable per-stage seed derived from the run seed and the stage name."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(stage.encode())]).generate_state(1)[0])


def build_env(config: ExperimentConfig) -> Mdp:
    if config.env.path is not None:
        return load_mdp(config.env.path)
    return make_env(config.env.name, **config.env.kwargs)


class _stage:
    """Context manager relabelling module errors with the stage that raised them."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (DrexError, ValueError)) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, obj):
    _write(path, json.dumps(obj, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise PreconditionError(f"missing intermediate {path}; run the earlier stage first") from None


def _trajs_to_json(trajs):
    return [t.to_dict() for t in trajs]


def _trajs_from_json(data):
    return [Trajectory.from_dict(t) for t in data]


# --------------------------------------------------------------------------- stages


def stage_demos(config: ExperimentConfig, mdp: Mdp, seed: int) -> list:
    with _stage("demo-gen"):
        d = config.demonstrator
        spec = DemonstratorSpec(d.mode, d.parameter, d.n_demos, stage_seed(seed, "demos"))
        for t in (demos := generate_demonstrations(mdp, spec)):
            t.validate(mdp)
        return demos


def stage_clone(config: ExperimentConfig, mdp: Mdp, demos) -> ClonedPolicy:
    with _stage("clone"):
        return behavioral_cloning(demos, mdp.n_states, mdp.n_actions, config.clone.model, config.clone.alpha)


def stage_noise(config: ExperimentConfig, mdp: Mdp, bc_policy, seed: int) -> dict:
    with _stage("degrade"):
        groups = noisy_rollouts(mdp, bc_policy, config.schedule(), stage_seed(seed, "noise"), workers=config.workers)
        if config.noise.include_noop:
            groups[float("inf")] = noop_trajectories(mdp, config.noise.noop_count, stay_action=mdp.meta.get("stay_action", 0))
        return groups


def stage_degradation(config: ExperimentConfig, mdp: Mdp, bc_policy, seed: int):
    with _stage("degrade"):
        return degradation_curve(bc_policy, mdp, config.schedule(), config.noise.curve_rollouts,
                                 stage_seed(seed, "degradation"))


def stage_rank(config: ExperimentConfig, groups: dict, seed: int):
    with _stage("rank"):
        r = config.ranking
        ds = build_ranked_dataset(groups, r.min_gap)
        batch = sample_snippet_pairs(ds, r.n_pairs, r.L_min, r.L_max, r.progress, stage_seed(seed, "snippets"),
                                     r.equal_length)
        return ds, batch


def stage_train(config: ExperimentConfig, mdp: Mdp, ds: RankedDataset, batch: SnippetBatch, seed: int):
    with _stage("train-reward"):
        train, val = split_pairs(batch, config.ranking.val_fraction, stage_seed(seed, "split"))
        C_train = train.state_counts(ds, mdp.n_states)
        C_val = val.state_counts(ds, mdp.n_states)
        d = mdp.n_features
        if config.reward.kind == "linear":
            spec, init = RewardModel.linear(np.zeros(d)), None
        else:
            spec = None
            hidden = config.reward.hidden

            def init(rng):
                return RewardModel.mlp(d, hidden, rng)

        return train_ensemble(mdp.features, C_train, C_val, spec, config.optimizer, stage_seed(seed, "train"),
                              config.reward.ensemble, init)


def stage_optimize(config: ExperimentConfig, mdp: Mdp, model, seed: int) -> dict:
    """One learned policy per policy seed."""
    with _stage("optimize"):
        out = {}
        for ps in config.policy_seeds:
            out[ps] = optimize_on_learned_reward(mdp, model, config.rl.method, config.rl.qlearning,
                                                 stage_seed(seed, f"policy-{ps}"), config.rl.sigmoid)
        return out


def livelong_policy(config: ExperimentConfig, mdp: Mdp, seed: int) -> Policy:
    """The same optimiser on a constant +1 reward."""
    return optimize_on_learned_reward(mdp, np.ones(mdp.n_states), config.rl.method, config.rl.qlearning,
                                      stage_seed(seed, "livelong"), config.rl.sigmoid)


# --------------------------------------------------------------------------- evaluation

SUMMARY_COLUMNS = ("method", "seed_policy", "mean_return", "std_return", "best_return", "worst_return",
                   "beats_demo_avg", "beats_demo_best")
METHODS = ("demonstrator", "drex", "bc", "livelong", "random", "optimal")


@dataclass
class MethodResult:
    method: str
    seed_policy: str
    returns: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.returns.mean())

    @property
    def std(self) -> float:
        return float(self.returns.std(ddof=1)) if self.returns.size > 1 else 0.0

    @property
    def best(self) -> float:
        return float(self.returns.max())

    @property
    def worst(self) -> float:
        return float(self.returns.min())


@dataclass
class EvaluationSummary:
    """Per-method statistics of true returns over evaluation rollouts.

    GAIL is not part of the comparison.
    """

    results: list
    demo_mean: float
    demo_best: float

    def row(self, method: str, seed_policy: str = "na") -> MethodResult:
        for r in self.results:
            if r.method == method and r.seed_policy == seed_policy:
                return r
        raise KeyError((method, seed_policy))

    def rows(self):
        for r in self.results:
            yield (r.method, r.seed_policy, r.mean, r.std, r.best, r.worst,
                   r.mean > self.demo_mean, r.mean > self.demo_best)

    def csv(self) -> str:
        lines = [",".join(SUMMARY_COLUMNS)]
        lines += [",".join(_fmt(v) for v in row) for row in self.rows()]
        return "\n".join(lines) + "\n"


def evaluate_policy(mdp: Mdp, policy, n: int, seed: int) -> np.ndarray:
    r = mdp.true_reward()
    trajs = rollout(mdp, policy, n, np.random.default_rng(seed))
    return np.array([trajectory_return(t, r, mdp.discount) for t in trajs])


def evaluate(config: ExperimentConfig, mdp: Mdp, demos, bc_policy, drex_policies: dict, seed: int) -> EvaluationSummary:
    with _stage("evaluate"):
        n = config.evaluation.rollouts
        r = mdp.true_reward()
        demo_returns = np.array([trajectory_return(t, r, mdp.discount) for t in demos])
        _, optimal = value_iteration(mdp)
        results = [MethodResult("demonstrator", "na", demo_returns)]
        drex = [
            MethodResult("drex", str(ps), evaluate_policy(mdp, pi, n, stage_seed(seed, f"eval-drex-{ps}")))
            for ps, pi in drex_policies.items()
        ]
        results += drex
        if len(drex) > 1:
            best = max(drex, key=lambda m: m.mean)
            results.append(MethodResult("drex", "best", best.returns))
            results.append(MethodResult("drex", "mean", np.concatenate([m.returns for m in drex])))
        results.append(MethodResult("bc", "na", evaluate_policy(mdp, bc_policy, n, stage_seed(seed, "eval-bc"))))
        results.append(MethodResult("livelong", "na", evaluate_policy(mdp, livelong_policy(config, mdp, seed), n,
                                                                     stage_seed(seed, "eval-livelong"))))
        results.append(MethodResult("random", "na", evaluate_policy(mdp, Policy.uniform(mdp.n_states, mdp.n_actions), n,
                                                                   stage_seed(seed, "eval-random"))))
        results.append(MethodResult("optimal", "na", evaluate_policy(mdp, optimal, n, stage_seed(seed, "eval-optimal"))))
        return EvaluationSummary(results, float(demo_returns.mean()), float(demo_returns.max()))


def better_than_demo_trajectories(config: ExperimentConfig, mdp: Mdp, demos, seed: int) -> list:
    """Held-out near-optimal rollouts whose true return beats the demonstration average."""
    r = mdp.true_reward()
    demo_mean = np.mean([trajectory_return(t, r, mdp.discount) for t in demos])
    _, optimal = value_iteration(mdp)
    rng = np.random.default_rng(stage_seed(seed, "better-than-demo"))
    out = []
    for eps in (0.0, 0.05, 0.1, 0.2):
        for t in rollout(mdp, epsilon_greedy_wrap(optimal, eps), config.evaluation.better_rollouts, rng, noise_level=eps):
            if trajectory_return(t, r, mdp.discount) > demo_mean:
                out.append(t)
    return out


def ambiguity_artifacts(config: ExperimentConfig, mdp: Mdp, groups: dict, seed: int):
    """Volume left after each ranking constraint between noise-level feature means, plus the elimination recurrence."""
    levels = sorted((k for k in groups if np.isfinite(k)), reverse=True)
    means = [np.mean([trajectory_feature_counts(t, mdp.features, mdp.discount) for t in groups[k]], axis=0)
             for k in levels]
    constraints = constraints_from_ranking(means, "adjacent")
    n = config.evaluation.ambiguity_samples
    rows = [(0, 1.0, 0.0)]
    for i in range(1, len(constraints) + 1):
        p, se = estimate_volume(AmbiguityProblem(mdp.n_features, constraints[:i]), n, stage_seed(seed, "volume"),
                                config.workers)
        rows.append((i, p, se))
    sim = hypothesis_elimination_sim(1024, mdp.n_features, 10, stage_seed(seed, "elimination"), 200)
    return sweep_csv(rows), sim.csv()


# --------------------------------------------------------------------------- artifacts


class RunDir:
    """File layout of one seeded run."""

    def __init__(self, root):
        self.root = Path(root)

    def __getattr__(self, name):
        names = {
            "config": "config.json",
            "demos": "demos.json",
            "bc": "policy_bc.json",
            "rollouts": "rollouts.json",
            "ranked": "ranked.json",
            "reward": "reward_model.json",
            "drex": "policy_drex.json",
            "summary": "summary.csv",
            "degradation": "degradation.csv",
            "curve": "training_curve.csv",
            "extrapolation": "extrapolation.csv",
            "correlation": "extrapolation_correlation.csv",
            "ambiguity": "ambiguity.csv",
            "recurrence": "recurrence.csv",
        }
        if name not in names:
            raise AttributeError(name)
        return self.root / names[name]


def save_demos(run: RunDir, demos):
    _write_json(run.demos, _trajs_to_json(demos))


def load_demos(run: RunDir):
    return _trajs_from_json(_read_json(run.demos))


def save_groups(run: RunDir, groups: dict):
    _write_json(run.rollouts, [{"epsilon": "inf" if not np.isfinite(k) else k, "trajectories": _trajs_to_json(v)}
                               for k, v in groups.items()])


def load_groups(run: RunDir) -> dict:
    return {float(g["epsilon"]): _trajs_from_json(g["trajectories"]) for g in _read_json(run.rollouts)}


def save_ranked(run: RunDir, ds: RankedDataset, batch: SnippetBatch):
    _write_json(run.ranked, {"dataset": ds.to_dict(), "snippets": batch.to_dict()})


def load_ranked(run: RunDir):
    data = _read_json(run.ranked)
    return RankedDataset.from_dict(data["dataset"]), SnippetBatch.from_dict(data["snippets"])


def save_policies(run: RunDir, policies: dict):
    _write_json(run.drex, {str(k): p.to_dict() for k, p in policies.items()})


def load_policies(run: RunDir) -> dict:
    return {int(k): Policy.from_dict(v) for k, v in _read_json(run.drex).items()}


def training_curve_csv(reports) -> str:
    lines = ["member,epoch,train_loss,val_loss"]
    for m, rep in enumerate(reports):
        lines += [f"{m},{i},{t!r},{v!r}" for i, (t, v) in enumerate(zip(rep.train_loss, rep.val_loss))]
    return "\n".join(lines) + "\n"


def emit_report(summary: EvaluationSummary, out_dir, extra: Optional[dict] = None):
    """Write ``summary.csv`` and any extra named CSV texts into ``out_dir``."""
    if summary is None or not summary.results:
        raise PreconditionError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "summary.csv", summary.csv())
    for name, text in (extra or {}).items():
        _write(out / name, text)


# --------------------------------------------------------------------------- drivers


@dataclass
class RunResult:
    summary: EvaluationSummary
    out_dir: Path
    artifacts: dict


def run_drex(config: ExperimentConfig, seed: int, out_dir=None) -> RunResult:
    """Every stage for one run seed, with intermediates and CSV artifacts written to ``out_dir``."""
    config.validate()
    run = RunDir(out_dir if out_dir is not None else Path(config.output_dir) / f"seed_{seed}")
    run.root.mkdir(parents=True, exist_ok=True)
    _write(run.config, config.to_json())
    with _stage("environment"):
        mdp = build_env(config)
    demos = stage_demos(config, mdp, seed)
    save_demos(run, demos)
    bc = stage_clone(config, mdp, demos)
    _write_json(run.bc, bc.policy.to_dict())
    groups = stage_noise(config, mdp, bc.policy, seed)
    save_groups(run, groups)
    ds, batch = stage_rank(config, groups, seed)
    save_ranked(run, ds, batch)
    model, reports = stage_train(config, mdp, ds, batch, seed)
    _write_json(run.reward, model.to_dict())
    policies = stage_optimize(config, mdp, model, seed)
    save_policies(run, policies)
    return finish_run(config, mdp, run, demos, bc.policy, groups, model, reports, policies, seed)


def finish_run(config, mdp, run, demos, bc_policy, groups, model, reports, policies, seed) -> RunResult:
    summary = evaluate(config, mdp, demos, bc_policy, policies, seed)
    artifacts = {"degradation.csv": degradation_csv(stage_degradation(config, mdp, bc_policy, seed))}
    if reports is not None:
        artifacts["training_curve.csv"] = training_curve_csv(reports)
    with _stage("evaluate"):
        synthetic = [t for k, v in groups.items() if np.isfinite(k) for t in v]
        sets = {"demos": demos, "synthetic": synthetic}
        better = better_than_demo_trajectories(config, mdp, demos, seed)
        if better:
            sets["better_than_demo"] = better
        ext = extrapolation_report(model, mdp, sets)
    artifacts["extrapolation.csv"] = ext.csv()
    artifacts["extrapolation_correlation.csv"] = ext.correlation_csv()
    if config.evaluation.ambiguity:
        with _stage("ambiguity"):
            artifacts["ambiguity.csv"], artifacts["recurrence.csv"] = ambiguity_artifacts(config, mdp, groups, seed)
    emit_report(summary, run.root, artifacts)
    return RunResult(summary, run.root, {"extrapolation": ext, **artifacts})


def run_all(config: ExperimentConfig, out_dir=None) -> list:
    """One run per configured seed, each in its own ``seed_<n>`` directory, plus ``runs.csv``."""
    root = Path(out_dir if out_dir is not None else config.output_dir)
    results = [run_drex(config, s, root / f"seed_{s}") for s in config.seeds]
    lines = ["run_seed,drex_mean,demo_mean,demo_best,beats_demo_avg,beats_demo_best"]
    for s, res in zip(config.seeds, results):
        m = drex_headline(res.summary)
        lines.append(",".join(_fmt(v) for v in (s, m.mean, res.summary.demo_mean, res.summary.demo_best,
                                                  m.mean > res.summary.demo_mean, m.mean > res.summary.demo_best)))
    _write(root / "runs.csv", "\n".join(lines) + "\n")
    return results


def drex_headline(summary: EvaluationSummary) -> MethodResult:
    """The reported D-REX row: best over policy seeds when there are several."""
    try:
        return summary.row("drex", "best")
    except KeyError:
        return next(r for r in summary.results if r.method == "drex")


def run_baseline_bc(config: ExperimentConfig, seed: int) -> MethodResult:
    mdp = build_env(config)
    demos = stage_demos(config, mdp, seed)
    bc = stage_clone(config, mdp, demos)
    return MethodResult("bc", "na", evaluate_policy(mdp, bc.policy, config.evaluation.rollouts, stage_seed(seed, "eval-bc")))


def run_baseline_livelong(config: ExperimentConfig, seed: int) -> MethodResult:
    mdp = build_env(config)
    pi = livelong_policy(config, mdp, seed)
    return MethodResult("livelong", "na", evaluate_policy(mdp, pi, config.evaluation.rollouts,
                                                          stage_seed(seed, "eval-livelong")))
