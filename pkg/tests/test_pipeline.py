import json

import numpy as np
import pytest

from drex import cli
from drex import pipeline as pl
from drex.errors import InsufficientLevelsError, PreconditionError, StageError
from drex.mdp import mdp_to_json
from drex.envs import lava_gridworld


def small_config(env="lava", **ranking):
    cfg = pl.default_config(env)
    cfg.ranking.n_pairs = 2000
    cfg.noise.curve_rollouts = 50
    cfg.evaluation.rollouts = 20
    cfg.policy_seeds = [0, 1]
    for k, v in ranking.items():
        setattr(cfg.ranking, k, v)
    return cfg


class TestConfig:
    def test_json_roundtrip(self):
        cfg = pl.default_config("terrain")
        back = pl.ExperimentConfig.from_json(cfg.to_json())
        assert back.to_dict() == cfg.to_dict()

    def test_unknown_key(self):
        data = pl.default_config().to_dict()
        data["ranking"]["snippet_len"] = 3
        with pytest.raises(PreconditionError, match=r"config\.ranking: unknown key"):
            pl.ExperimentConfig.from_dict(data)

    @pytest.mark.parametrize("path, value", [(("seeds",), []), (("reward", "kind"), "cnn"),
                                             (("rl", "method"), "ppo"), (("noise", "levels"), [0.1, 0.5])])
    def test_invalid(self, path, value):
        data = pl.default_config().to_dict()
        node = data
        for p in path[:-1]:
            node = node[p]
        node[path[-1]] = value
        with pytest.raises(Exception):
            pl.ExperimentConfig.from_dict(data)

    def test_defaults_per_environment(self):
        for env in ("terrain", "lava", "prop1"):
            assert pl.default_config(env).env.name == env
        with pytest.raises(PreconditionError):
            pl.default_config("pong")

    def test_mdp_file(self, tmp_path):
        path = tmp_path / "lava.json"
        path.write_text(mdp_to_json(lava_gridworld()))
        cfg = small_config()
        cfg.env = pl.EnvSpec(name=None, path=str(path))
        assert pl.build_env(cfg.validate()).n_states == 25

    def test_stage_seeds_are_distinct_and_stable(self):
        assert pl.stage_seed(0, "demos") != pl.stage_seed(0, "noise")
        assert pl.stage_seed(3, "demos") == pl.stage_seed(3, "demos")


class TestRun:
    def test_single_level_fails_at_ranking(self, tmp_path):
        cfg = small_config()
        cfg.noise.levels = [0.5]
        with pytest.raises(StageError) as info:
            pl.run_drex(cfg, 0, tmp_path)
        assert info.value.stage == "rank" and isinstance(info.value.__cause__, InsufficientLevelsError)
        assert str(info.value).startswith("[rank] InsufficientLevelsError")

    def test_artifacts_and_schema(self, tmp_path):
        cfg = small_config()
        cfg.evaluation.ambiguity = True
        cfg.evaluation.ambiguity_samples = 2000
        res = pl.run_drex(cfg, 1, tmp_path)
        header = (tmp_path / "summary.csv").read_text().splitlines()[0]
        assert header == ",".join(pl.SUMMARY_COLUMNS)
        methods = {r.method for r in res.summary.results}
        assert methods == set(pl.METHODS)
        seeds = [r.seed_policy for r in res.summary.results if r.method == "drex"]
        assert seeds == ["0", "1", "best", "mean"]
        for name in ("degradation.csv", "training_curve.csv", "extrapolation.csv", "extrapolation_correlation.csv",
                     "ambiguity.csv", "recurrence.csv", "demos.json", "policy_bc.json", "rollouts.json",
                     "ranked.json", "reward_model.json", "policy_drex.json", "config.json"):
            assert (tmp_path / name).exists(), name

    def test_livelong_differs_by_tag_only(self, tmp_path):
        res = pl.run_drex(small_config(), 0, tmp_path)
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        ll = next(l for l in lines if l.startswith("livelong,"))
        dx = next(l for l in lines if l.startswith("drex,0,"))
        assert len(ll.split(",")) == len(dx.split(","))
        # constant reward: every action optimal, lowest index (idle) chosen
        pi = pl.livelong_policy(small_config(), lava_gridworld(), 0)
        assert np.all(pi.greedy_actions() == 0)
        assert res.summary.row("livelong").mean < res.summary.row("drex", "0").mean

    def test_optimal_dominates(self, tmp_path):
        res = pl.run_drex(small_config(), 2, tmp_path)
        opt = res.summary.row("optimal").mean
        for r in res.summary.results:
            if r.method not in ("optimal", "demonstrator"):
                assert r.mean <= opt + 3 * r.std / np.sqrt(r.returns.size) + 1e-9

    def test_emit_report_errors(self, tmp_path):
        with pytest.raises(PreconditionError):
            pl.emit_report(pl.EvaluationSummary([], 0.0, 0.0), tmp_path)
        blocker = tmp_path / "file"
        blocker.write_text("x")
        summary = pl.EvaluationSummary([pl.MethodResult("bc", "na", np.array([1.0, 2.0]))], 0.0, 0.0)
        with pytest.raises(OSError):
            pl.emit_report(summary, blocker / "sub")

    def test_emit_idempotent(self, tmp_path):
        summary = pl.EvaluationSummary([pl.MethodResult("bc", "na", np.array([1.0, 2.0]))], 1.2, 3.0)
        pl.emit_report(summary, tmp_path)
        first = (tmp_path / "summary.csv").read_bytes()
        pl.emit_report(summary, tmp_path)
        assert (tmp_path / "summary.csv").read_bytes() == first
        assert first.decode().splitlines()[1] == "bc,na,1.5,0.7071067811865476,2.0,1.0,true,false"

    def test_bc_baseline_near_demonstrator(self):
        cfg = small_config("terrain")
        cfg.evaluation.rollouts = 400
        cfg.demonstrator.n_demos = 40
        res = pl.run_baseline_bc(cfg, 0)
        mdp = pl.build_env(cfg)
        from drex.cloning import demonstrator_policy
        from drex.mdp import policy_return

        j_demo = policy_return(mdp, demonstrator_policy(mdp, cfg.demonstrator), horizon=mdp.horizon)
        assert abs(res.mean - j_demo) < 4 * res.std / np.sqrt(res.returns.size) + 0.3

    def test_bc_on_optimal_demos_is_near_optimal(self):
        cfg = small_config("lava")
        cfg.demonstrator.parameter = 0.02
        res = pl.run_baseline_bc(cfg, 0)
        assert res.mean > 2.0

    def test_q_learning_pipeline(self, tmp_path):
        cfg = small_config()
        cfg.rl.method = "q-learning"
        cfg.rl.qlearning.episodes = 3000
        cfg.policy_seeds = [0]
        res = pl.run_drex(cfg, 0, tmp_path)
        assert res.summary.row("drex", "0").mean > res.summary.demo_mean


def test_stage_replay_matches_run_all(tmp_path):
    cfg = small_config()
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())
    stage_dir = tmp_path / "stages"
    for cmd in cli.STAGES:
        assert cli.main([cmd, "--config", str(cfg_path), "--seed", "4", "--out", str(stage_dir)]) == 0
    assert cli.main(["run-all", "--config", str(cfg_path), "--seed", "4", "--out", str(tmp_path / "all")]) == 0
    for name in ("summary.csv", "degradation.csv", "training_curve.csv", "extrapolation.csv", "ranked.json",
                 "reward_model.json", "policy_drex.json"):
        assert (stage_dir / name).read_bytes() == (tmp_path / "all" / "seed_4" / name).read_bytes(), name


def test_cli_missing_intermediate(tmp_path, capsys):
    assert cli.main(["clone", "--env", "lava", "--out", str(tmp_path)]) == 2
    assert "demos.json" in capsys.readouterr().err


def test_cli_ambiguity_and_theory(tmp_path):
    assert cli.main(["ambiguity", "--env", "lava", "--out", str(tmp_path / "a")]) == 0
    prop2 = (tmp_path / "a" / "prop2.csv").read_text().splitlines()
    v_opt, v_rank = float(prop2[1].split(",")[2]), float(prop2[2].split(",")[2])
    assert v_rank <= v_opt
    assert cli.main(["theory", "--env", "lava", "--out", str(tmp_path / "t")]) == 0
    rows = (tmp_path / "t" / "prop1.csv").read_text().splitlines()[1:]
    assert all(r.endswith("true,true,true") for r in rows)
