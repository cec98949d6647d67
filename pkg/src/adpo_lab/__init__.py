"""Decoupled-advantage preference optimization on tabular toy policies.

A policy emits an answer and then a self-verification score token.  Answer
tokens are trained on group-normalized answer rewards; the score token on a
group-normalized verification reward (binary agreement or the pairwise
preference reward), routed by disjoint token masks.
"""

__version__ = "0.1.0"

from .advantage import TokenMasks, batch_advantages, broadcast, decoupled_advantages, entangled_advantage, group_normalize, token_masks
from .config import ConfigError, RunConfig, parse_config, parse_mapping
from .evaluation import EvalConfig, EvalReport, Protocol, auc, average_precision, best_of_n, evaluate, majority_vote
from .experiments import (
    Arm,
    ExperimentSpec,
    run_collapse_experiment,
    run_decoupling_experiment,
    run_experiment,
    run_margin_sweep,
    run_score_distribution,
)
from .objective import AdvantageMode, ObjectiveConfig, adpo_gradient, adpo_objective
from .policy import DecodeConfig, InitKind, PolicyParams, Rollout, RolloutBatch, init_params, sample_batch
from .rewards import Thresholds, VerificationMode, binary_verification_reward, preference_verification_reward
from .tasks import Task, TaskKind, TaskSpec, make_task
from .trainer import StepMetrics, TrainConfig, train, train_step

__all__ = [
    "AdvantageMode", "Arm", "ConfigError", "DecodeConfig", "EvalConfig", "EvalReport", "ExperimentSpec",
    "InitKind", "ObjectiveConfig", "PolicyParams", "Protocol", "Rollout", "RolloutBatch", "RunConfig",
    "StepMetrics", "Task", "TaskKind", "TaskSpec", "Thresholds", "TokenMasks", "TrainConfig",
    "VerificationMode", "adpo_gradient", "adpo_objective", "auc", "average_precision", "batch_advantages",
    "best_of_n", "binary_verification_reward", "broadcast", "decoupled_advantages", "entangled_advantage",
    "evaluate", "group_normalize", "init_params", "majority_vote", "make_task", "parse_config",
    "parse_mapping", "preference_verification_reward", "run_collapse_experiment", "run_decoupling_experiment",
    "run_experiment", "run_margin_sweep", "run_score_distribution", "sample_batch", "token_masks", "train",
    "train_step",
]
