"""Reward learning from automatically ranked, noise-injected rollouts on tabular MDPs."""

from .envs import make_env
from .mdp import Mdp, Trajectory, load_mdp, policy_return
from .pipeline import ExperimentConfig, default_config, run_all, run_drex
from .policy import Policy

__version__ = "0.1.0"

__all__ = ["Mdp", "Trajectory", "Policy", "ExperimentConfig", "default_config", "load_mdp", "make_env",
           "policy_return", "run_all", "run_drex"]
