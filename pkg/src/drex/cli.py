"""Command-line entry point (``drex``)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .ambiguity import ambiguity_sweep, corollary1_k, hypothesis_elimination_sim, prop2_compare, sweep_csv
from .cloning import degradation_csv
from .envs import prop1_mdp
from .errors import DrexError
from .mdp import policy_return
from .policy import Policy
from .reward import model_from_dict
from .solvers import enumerate_deterministic_policies, value_iteration
from .theory import clone_gap_check, degradation_bound, DegradationModel, prop1_demo, theorem1_suite

STAGES = ("demo-gen", "clone", "degrade", "rank", "train-reward", "optimize", "evaluate")


def _config(args) -> pl.ExperimentConfig:
    cfg = pl.load_config(args.config) if args.config else pl.default_config(args.env)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg.validate()


def _run_dir(args, cfg) -> pl.RunDir:
    if args.out:
        return pl.RunDir(args.out)
    return pl.RunDir(Path(cfg.output_dir) / f"seed_{cfg.seeds[0]}")


def _stage(args):
    cfg = _config(args)
    seed = cfg.seeds[0]
    run = _run_dir(args, cfg)
    run.root.mkdir(parents=True, exist_ok=True)
    mdp = pl.build_env(cfg)
    cmd = args.command
    if cmd == "demo-gen":
        pl._write(run.config, cfg.to_json())
        pl.save_demos(run, pl.stage_demos(cfg, mdp, seed))
    elif cmd == "clone":
        bc = pl.stage_clone(cfg, mdp, pl.load_demos(run))
        pl._write_json(run.bc, bc.policy.to_dict())
    elif cmd == "degrade":
        bc = Policy.from_dict(pl._read_json(run.bc))
        pl.save_groups(run, pl.stage_noise(cfg, mdp, bc, seed))
        pl._write(run.degradation, degradation_csv(pl.stage_degradation(cfg, mdp, bc, seed)))
    elif cmd == "rank":
        ds, batch = pl.stage_rank(cfg, pl.load_groups(run), seed)
        pl.save_ranked(run, ds, batch)
    elif cmd == "train-reward":
        ds, batch = pl.load_ranked(run)
        model, reports = pl.stage_train(cfg, mdp, ds, batch, seed)
        pl._write_json(run.reward, model.to_dict())
        pl._write(run.curve, pl.training_curve_csv(reports))
    elif cmd == "optimize":
        model = model_from_dict(pl._read_json(run.reward))
        pl.save_policies(run, pl.stage_optimize(cfg, mdp, model, seed))
    elif cmd == "evaluate":
        res = pl.finish_run(
            cfg, mdp, run, pl.load_demos(run), Policy.from_dict(pl._read_json(run.bc)), pl.load_groups(run),
            model_from_dict(pl._read_json(run.reward)), None, pl.load_policies(run), seed,
        )
        sys.stdout.write(res.summary.csv())
    print(f"{cmd}: wrote {run.root}", file=sys.stderr)


def _run_all(args):
    cfg = _config(args)
    results = pl.run_all(cfg, args.out or cfg.output_dir)
    for seed, res in zip(cfg.seeds, results):
        head = pl.drex_headline(res.summary)
        print(f"seed {seed}: drex {head.mean:.4f} (worst {head.worst:.4f}), demos {res.summary.demo_mean:.4f} "
              f"(best {res.summary.demo_best:.4f}) -> {res.out_dir}")


def _ambiguity(args):
    cfg = _config(args)
    out = Path(args.out or Path(cfg.output_dir) / "ambiguity")
    seed = cfg.seeds[0]
    mdp = pl.build_env(cfg)
    n = cfg.evaluation.ambiguity_samples
    rows = ambiguity_sweep(mdp.n_features, 12, n, pl.stage_seed(seed, "sweep"))
    pl._write(out / "ambiguity_sweep.csv", sweep_csv(rows))
    sim = hypothesis_elimination_sim(1024, mdp.n_features, 10, pl.stage_seed(seed, "elimination"), 200)
    pl._write(out / "recurrence.csv", sim.csv())
    lines = ["x_percent,k,k_ceil"]
    for x in (50.0, 75.0, 87.5, 90.0, 99.0):
        k, c = corollary1_k(x)
        lines.append(f"{x!r},{k!r},{c}")
    pl._write(out / "corollary1.csv", "\n".join(lines) + "\n")
    # ranking vs optimal-only ambiguity on the four-state counterexample
    small = prop1_mdp()
    _, best = value_iteration(small)
    others = [p for p in enumerate_deterministic_policies(small) if p.probs[0].argmax() != best.probs[0].argmax()]
    ranking = sorted({int(p.probs[0].argmax()): p for p in others}.values(),
                     key=lambda p: policy_return(small, p)) + [best]
    res = prop2_compare(small, ranking, n, pl.stage_seed(seed, "prop2"))
    pl._write(out / "prop2.csv", "set,n_constraints,volume_fraction\n"
              f"optimal_only,{res.n_optimal_constraints},{res.optimal_volume!r}\n"
              f"ranked,{res.n_ranked_constraints},{res.ranked_volume!r}\n")
    print(f"ambiguity: wrote {out}", file=sys.stderr)


def _theory(args):
    cfg = _config(args)
    out = Path(args.out or Path(cfg.output_dir) / "theory")
    seed = cfg.seeds[0]
    suite = theorem1_suite(500, seed)
    lines = ["instance,delta,eps_phi,eps_reward,bound,condition_holds,extrapolated"]
    lines += [",".join(pl._fmt(v) for v in (i, r.delta, r.eps_phi, r.eps_reward, r.bound, r.condition_holds, r.extrapolated))
              for i, r in enumerate(suite.reports)]
    pl._write(out / "theorem1.csv", "\n".join(lines) + "\n")
    lines = ["delta,expert_only_equal,ranking_separates,expert_optimal"]
    for d in (1.0, 10.0, 100.0):
        c = prop1_demo(d).checks
        lines.append(",".join(pl._fmt(v) for v in (d, c["expert_only_equal"], c["ranking_separates"], c["expert_optimal"])))
    pl._write(out / "prop1.csv", "\n".join(lines) + "\n")
    lines = ["beta,epsilon,n_actions,p_exact,p_large_action,bound_T10"]
    for beta in (0.5, 0.8, 0.9, 1.0):
        for eps in (0.0, 0.25, 0.5, 1.0):
            b = degradation_bound(DegradationModel(beta, 10, 5), eps)
            lines.append(",".join(pl._fmt(v) for v in (beta, eps, 5, b.p_exact, b.p_large_action, b.bound)))
    pl._write(out / "degradation_bound.csv", "\n".join(lines) + "\n")
    mdp = pl.build_env(cfg)
    demos = pl.stage_demos(cfg, mdp, seed)
    bc = pl.stage_clone(cfg, mdp, demos)
    lines = ["epsilon,beta,J_optimal,J_clone,gap,bound"]
    lines += [",".join(pl._fmt(v) for v in (r.epsilon, r.beta, r.J_optimal, r.J_clone, r.gap, r.bound))
              for r in clone_gap_check(mdp, bc.policy, np.round(np.linspace(1.0, 0.0, 11), 10))]
    pl._write(out / "clone_gap.csv", "\n".join(lines) + "\n")
    print(f"theory: {suite.n_condition} of {len(suite.reports)} instances meet the condition, "
          f"{suite.n_counterexamples} counterexamples; wrote {out}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drex", description="Reward extrapolation from automatically ranked noisy rollouts.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (defaults to the built-in config for --env)")
    common.add_argument("--env", default="terrain", help="built-in environment when no config is given")
    common.add_argument("--seed", type=int, help="run seed (overrides the config's seed list)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker threads for rollouts and Monte Carlo")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage on a run directory")
    sub.add_parser("run-all", parents=[common], help="every stage for every configured seed")
    sub.add_parser("ambiguity", parents=[common], help="reward-ambiguity experiments")
    sub.add_parser("theory", parents=[common], help="theory checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run-all": _run_all, "ambiguity": _ambiguity, "theory": _theory}
    try:
        handlers.get(args.command, _stage)(args)
    except (DrexError, ValueError, OSError) as exc:
        print(f"drex: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
