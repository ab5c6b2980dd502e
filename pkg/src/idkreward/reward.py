"""Ternary accuracy reward, format reward, and batch scoring."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Mapping

from .core import QuestionRecord, RewardConfig, TaskMode, Verdict
from .parse import StructuredOutput, classify


@dataclass(frozen=True)
class RewardBreakdown:
    accuracy_component: float
    format_component: float
    total: float


@dataclass(frozen=True)
class ScoredItem:
    """One batch entry; ``error`` is set (and the rest None) for unknown ids."""

    question_id: str
    verdict: Verdict | None = None
    breakdown: RewardBreakdown | None = None
    structured: StructuredOutput | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        if self.error is not None:
            return {"question_id": self.question_id, "error": self.error}
        return {
            "question_id": self.question_id,
            "verdict": self.verdict.value,
            "accuracy_reward": self.breakdown.accuracy_component,
            "format_reward": self.breakdown.format_component,
            "total": self.breakdown.total,
        }


def accuracy_reward(verdict: Verdict, config: RewardConfig) -> float:
    # malformed output pays r_wrong: evading the schema must not beat a wrong answer
    if verdict is Verdict.CORRECT:
        return float(config.r_correct)
    if verdict is Verdict.ABSTAIN:
        return float(config.r_abs)
    return float(config.r_wrong)


def format_reward(structured: StructuredOutput, config: RewardConfig) -> float:
    if config.mode is TaskMode.MCQ_TAGGED and structured.format_ok:
        return float(config.format_bonus)
    return 0.0


def reward_breakdown(
    verdict: Verdict, structured: StructuredOutput, config: RewardConfig
) -> RewardBreakdown:
    acc = accuracy_reward(verdict, config)
    fmt = format_reward(structured, config)
    return RewardBreakdown(acc, fmt, acc + fmt)


def score_batch(
    raws: Iterable[tuple[str, str]],
    records: Mapping[str, QuestionRecord] | Iterable[QuestionRecord],
    config: RewardConfig,
) -> list[ScoredItem]:
    """Classify and reward each ``(question_id, text)`` pair, preserving order.

    The config's mode is overridden per item by the record's own mode.
    """
    if not isinstance(records, Mapping):
        records = {r.id: r for r in records}
    out = []
    for qid, text in raws:
        record = records.get(qid)
        if record is None:
            out.append(ScoredItem(qid, error=f"unknown question_id {qid!r}"))
            continue
        item_config = config
        if config.mode is not record.mode:
            item_config = dataclasses.replace(config, mode=record.mode)
        verdict, structured = classify(text, record)
        out.append(
            ScoredItem(qid, verdict, reward_breakdown(verdict, structured, item_config), structured)
        )
    return out
