"""Abstention-aware verifiable rewards for question answering."""

from .core import (
    QuestionRecord,
    RewardConfig,
    TaskMode,
    Verdict,
    load_dataset,
    save_dataset,
    validate_dataset,
)
from .evalmetrics import EvalCounts, abstention_recall, accuracy, adjusted_accuracy, tally
from .parse import classify, detect_abstention, normalize_math, parse_boxed, parse_tagged
from .reward import accuracy_reward, format_reward, score_batch

__version__ = "0.1.0"

__all__ = [
    "EvalCounts",
    "QuestionRecord",
    "RewardConfig",
    "TaskMode",
    "Verdict",
    "abstention_recall",
    "accuracy",
    "accuracy_reward",
    "adjusted_accuracy",
    "classify",
    "detect_abstention",
    "format_reward",
    "load_dataset",
    "normalize_math",
    "parse_boxed",
    "parse_tagged",
    "save_dataset",
    "score_batch",
    "tally",
    "validate_dataset",
]
