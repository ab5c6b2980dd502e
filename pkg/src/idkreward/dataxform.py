"""Dataset variants: IDK-augmented multiple choice and SFT abstention labels."""

from __future__ import annotations

import enum
import hashlib
import string
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .core import IDK_TEXT, QuestionRecord, TaskMode, Verdict


class SftTarget(str, enum.Enum):
    ANSWER_KEY = "answer_key"
    ABSTAIN = "abstain"


@dataclass(frozen=True)
class SftRecord:
    question_id: str
    target: SftTarget
    rendered_target: str

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "target": self.target.value,
            "rendered_target": self.rendered_target,
        }


class MissingVerdictsError(KeyError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__(f"no base verdict for ids: {', '.join(self.missing)}")


def inject_idk_option(record: QuestionRecord) -> QuestionRecord:
    """Append an "I Don't Know" option under the next free letter.

    No-op when the record already carries an abstention option.
    """
    if record.mode is not TaskMode.MCQ_TAGGED:
        raise ValueError(f"inject_idk_option not applicable to {record.mode.value} record {record.id!r}")
    if record.idk_letter is not None:
        return record
    options = record.options or ()
    letter = string.ascii_uppercase[len(options)]
    return replace(record, options=tuple(options) + ((letter, IDK_TEXT),))


def _render(record: QuestionRecord, target: SftTarget) -> str:
    if target is SftTarget.ANSWER_KEY:
        return record.answer_key
    if record.mode is TaskMode.MCQ_TAGGED:
        return inject_idk_option(record).idk_letter
    return IDK_TEXT


def selection_key(seed: int, item_id: str) -> bytes:
    """Per-item pseudo-random sort key; independent of dataset order and sharding."""
    return hashlib.blake2b(f"{seed}:{item_id}".encode(), digest_size=16).digest()


def sample_abstain_ids(ids: Sequence[str], ratio: float, seed: int) -> set[str]:
    """Exactly ``round(ratio * len(ids))`` ids, uniformly without replacement."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    k = round(ratio * len(ids))
    ranked = sorted(ids, key=lambda i: selection_key(seed, i))
    return set(ranked[:k])


def make_sft_random(records: Sequence[QuestionRecord], ratio: float, seed: int) -> list[SftRecord]:
    chosen = sample_abstain_ids([r.id for r in records], ratio, seed)
    out = []
    for r in records:
        target = SftTarget.ABSTAIN if r.id in chosen else SftTarget.ANSWER_KEY
        out.append(SftRecord(r.id, target, _render(r, target)))
    return out


def make_sft_rtuning(
    records: Iterable[QuestionRecord], base_verdicts: Mapping[str, Verdict]
) -> list[SftRecord]:
    """Abstain wherever the base model was not correct.

    Incorrect and malformed base answers both count as wrong; an existing
    base-model abstention is kept as an abstention target.
    """
    records = list(records)
    missing = [r.id for r in records if r.id not in base_verdicts]
    if missing:
        raise MissingVerdictsError(missing)
    out = []
    for r in records:
        verdict = Verdict(base_verdicts[r.id])
        target = SftTarget.ANSWER_KEY if verdict is Verdict.CORRECT else SftTarget.ABSTAIN
        out.append(SftRecord(r.id, target, _render(r, target)))
    return out
