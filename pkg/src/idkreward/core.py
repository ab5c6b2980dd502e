"""Shared domain types: task modes, question records, verdicts, reward config.

Everything here is an immutable value. Dataset files are JSON-lines with one
record per line::

    {"id": "q1", "prompt": "...", "options": [{"letter": "A", "text": "..."}],
     "answer_key": "A", "mode": "mcq_tagged"}
"""

from __future__ import annotations

import enum
import json
import string
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

IDK_TEXT = "I Don't Know"
ABSTENTION_LEXICON = frozenset({"i don't know", "i dont know", "idk"})


class TaskMode(str, enum.Enum):
    MCQ_TAGGED = "mcq_tagged"
    OPEN_BOXED = "open_boxed"


class Verdict(str, enum.Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    ABSTAIN = "abstain"
    MALFORMED = "malformed"


class DatasetFormatError(ValueError):
    """A dataset/response file line could not be parsed."""

    def __init__(self, path, lineno: int, reason: str):
        self.path = str(path)
        self.lineno = lineno
        self.reason = reason
        super().__init__(f"{path}:{lineno}: {reason}")


def is_abstention_text(text: str) -> bool:
    """True if *text* reads as "I don't know" after case/punctuation folding."""
    folded = text.replace("’", "'").strip().casefold()
    if folded in ABSTENTION_LEXICON:
        return True
    stripped = folded.translate(str.maketrans("", "", string.punctuation))
    return " ".join(stripped.split()) in ABSTENTION_LEXICON


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    prompt: str
    answer_key: str
    mode: TaskMode
    options: tuple[tuple[str, str], ...] | None = None

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(letter for letter, _ in self.options or ())

    @property
    def idk_letter(self) -> str | None:
        """Letter of the option whose text is an abstention phrase, if any."""
        for letter, text in self.options or ():
            if is_abstention_text(text):
                return letter
        return None

    def to_dict(self) -> dict:
        options = None
        if self.options is not None:
            options = [{"letter": letter, "text": text} for letter, text in self.options]
        return {
            "id": self.id,
            "prompt": self.prompt,
            "options": options,
            "answer_key": self.answer_key,
            "mode": self.mode.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuestionRecord":
        options = data.get("options")
        if options is not None:
            options = tuple((str(o["letter"]), str(o["text"])) for o in options)
        return cls(
            id=str(data["id"]),
            prompt=str(data["prompt"]),
            answer_key=str(data["answer_key"]),
            mode=TaskMode(data["mode"]),
            options=options,
        )


@dataclass(frozen=True)
class RewardConfig:
    """Ternary accuracy reward plus an optional format bonus.

    Orderings outside ``r_wrong <= r_abs <= r_correct`` only warn, since reward
    sweeps deliberately probe them.
    """

    r_abs: float = 0.0
    r_correct: float = 1.0
    r_wrong: float = -1.0
    format_bonus: float = 0.5
    mode: TaskMode = TaskMode.MCQ_TAGGED

    def __post_init__(self):
        if self.format_bonus < 0:
            raise ValueError("format_bonus must be >= 0")
        if not (self.r_wrong <= self.r_abs <= self.r_correct):
            warnings.warn(
                f"reward ordering r_wrong <= r_abs <= r_correct violated "
                f"({self.r_wrong}, {self.r_abs}, {self.r_correct})",
                stacklevel=3,
            )


@dataclass(frozen=True)
class Violation:
    record_id: str
    message: str


def _record_violations(record: QuestionRecord) -> Iterator[str]:
    if not record.id:
        yield "empty id"
    if record.mode is TaskMode.MCQ_TAGGED:
        if not record.options:
            yield "mcq_tagged record requires options"
            return
        letters = record.letters
        if len(set(letters)) != len(letters):
            yield "duplicate option letters"
        expected = tuple(string.ascii_uppercase[: len(letters)])
        if letters != expected:
            yield "option letters not contiguous from 'A'"
        if len(record.answer_key) != 1:
            yield "answer_key must be a single letter"
        if record.answer_key not in letters:
            yield "answer_key not among options"
    else:
        if record.options is not None:
            yield "open_boxed record must not have options"
        if not record.answer_key.strip():
            yield "open_boxed record requires a non-empty gold answer"


def validate_dataset(records: Iterable[QuestionRecord]) -> list[Violation]:
    """Check type invariants; an empty list means the dataset is valid."""
    records = list(records)
    report = [Violation(r.id, msg) for r in records for msg in _record_violations(r)]
    counts = Counter(r.id for r in records)
    report.extend(Violation(rid, "duplicate id") for rid, n in counts.items() if n > 1)
    return report


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for each non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(path, lineno, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetFormatError(path, lineno, "expected a JSON object")
            yield lineno, obj


def write_jsonl(path, rows: Iterable[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_dataset(path) -> list[QuestionRecord]:
    records = []
    for lineno, obj in iter_jsonl(path):
        try:
            records.append(QuestionRecord.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(path, lineno, f"bad record: {exc!r}") from exc
    return records


def save_dataset(path, records: Iterable[QuestionRecord]) -> None:
    write_jsonl(path, (r.to_dict() for r in records))
