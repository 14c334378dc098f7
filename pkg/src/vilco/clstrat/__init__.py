from .bic import BiasCorrection, bic_correct
from .config import METHODS, StrategyConfig, config_for_kind
from .importance import (
    ImportanceMap,
    ewc_estimate_fisher,
    ewc_penalty,
    mas_importance,
    merge_importance,
)
from .trainer import ContinualTrainer, TaskLog, replay_train_mix

__all__ = [
    "METHODS",
    "BiasCorrection",
    "ContinualTrainer",
    "ImportanceMap",
    "StrategyConfig",
    "TaskLog",
    "bic_correct",
    "config_for_kind",
    "ewc_estimate_fisher",
    "ewc_penalty",
    "mas_importance",
    "merge_importance",
    "replay_train_mix",
]
