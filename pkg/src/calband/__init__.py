"""Calibrated shelf recommendations with a contextual bandit over target mixes."""
from .calibration import CalibrationConfig, greedy_construct, kl_divergence, steck_target
from .domain import CalbandError, ContentDistribution, LoggedTriplet, Shelf, Slate, UserContext
from .ope import OpeConfig, ips_estimate, precision_at_1
from .policy import ActionSet, EpsilonGreedyPolicy, GaussianLogging, UniformLogging
from .reward_model import RewardModel, TrainConfig, load_checkpoint, save_checkpoint, train
from .simulator import SimConfig, run_logging

__version__ = "0.1.0"

__all__ = [
    "ActionSet", "CalbandError", "CalibrationConfig", "ContentDistribution",
    "EpsilonGreedyPolicy", "GaussianLogging", "LoggedTriplet", "OpeConfig", "RewardModel",
    "Shelf", "SimConfig", "Slate", "TrainConfig", "UniformLogging", "UserContext",
    "greedy_construct", "ips_estimate", "kl_divergence", "load_checkpoint",
    "precision_at_1", "run_logging", "save_checkpoint", "steck_target", "train",
]
