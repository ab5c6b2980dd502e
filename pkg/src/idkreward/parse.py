"""Answer extraction, normalization, abstention detection and verdicts.

Two output formats are understood:

* tagged (multiple choice): ``<reasoning>...</reasoning><answer>X</answer>``
* boxed (open ended): the final answer inside ``\\boxed{...}``

In both cases the *last* answer span wins, because models restate and the
final statement is the committed one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .core import QuestionRecord, TaskMode, Verdict, is_abstention_text

_REASONING_RE = re.compile(r"<reasoning>(.*?)</reasoning>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_LETTER_RE = re.compile(r"^\(?([A-Za-z])\)?[.:]?$")
_BOXED = "\\boxed"


@dataclass(frozen=True)
class StructuredOutput:
    reasoning: str | None
    answer_raw: str | None
    format_ok: bool


def parse_tagged(raw: str) -> StructuredOutput:
    reasoning_m = _REASONING_RE.search(raw)
    answer_matches = list(_ANSWER_RE.finditer(raw))
    answer_m = answer_matches[-1] if answer_matches else None

    reasoning = reasoning_m.group(1).strip() if reasoning_m else None
    answer = answer_m.group(1).strip() if answer_m else None
    answer = answer or None

    format_ok = (
        reasoning_m is not None
        and answer is not None
        and reasoning_m.end() <= answer_m.start()
    )
    return StructuredOutput(reasoning, answer, format_ok)


def _find_closing_brace(text: str, open_idx: int) -> int | None:
    depth = 0
    i = open_idx
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            # escaped brace (\{ or \}) does not count toward nesting
            i += 2
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i
        i += 1
    return None


def parse_boxed(raw: str) -> str | None:
    """Content of the last ``\\boxed{...}``; None if absent or unbalanced."""
    idx = raw.rfind(_BOXED + "{")
    if idx < 0:
        return None
    open_idx = idx + len(_BOXED)
    close_idx = _find_closing_brace(raw, open_idx)
    if close_idx is None:
        return None
    return raw[open_idx + 1 : close_idx]


_LEFT_RIGHT_RE = re.compile(r"\\(?:left|right)(?![A-Za-z])")
_FRAC_RE = re.compile(r"\\frac\{(-?[A-Za-z0-9.]+)\}\{(-?[A-Za-z0-9.]+)\}")


def _strip_text_wrapper(s: str) -> str:
    prefix = "\\text{"
    if s.startswith(prefix) and _find_closing_brace(s, len(prefix) - 1) == len(s) - 1:
        return s[len(prefix) : -1]
    return s


def normalize_math(answer: str) -> str:
    """Canonical string form of a boxed math answer.

    Purely textual; no expression evaluation. Whitespace runs collapse to a
    single space, which survives only between two alphanumerics, so
    ``"( 1/2 )"`` and ``"(1/2)"`` agree while ``"I Don't Know"`` keeps its words.
    """
    s = answer.strip()
    s = s.strip("$").strip()
    s = _LEFT_RIGHT_RE.sub("", s)
    s = s.replace("\\!", "").replace("\\,", "")
    s = s.replace("\\dfrac", "\\frac")
    s = _FRAC_RE.sub(r"\1/\2", s)
    s = _strip_text_wrapper(s.strip())
    s = s.replace("\\ ", " ")
    s = re.sub(r"\s+", " ", s).strip()
    s = re.sub(r"(?<![A-Za-z0-9]) | (?![A-Za-z0-9])", "", s)
    return s


def _answer_letter(answer: str) -> str | None:
    m = _LETTER_RE.match(answer.strip())
    return m.group(1).upper() if m else None


def detect_abstention(answer: str, mode: TaskMode, idk_letter: str | None = None) -> bool:
    if mode is TaskMode.MCQ_TAGGED and idk_letter is not None:
        if _answer_letter(answer) == idk_letter.upper():
            return True
    return is_abstention_text(normalize_math(answer))


def classify(raw: str, record: QuestionRecord) -> tuple[Verdict, StructuredOutput]:
    """Map one raw model output to exactly one verdict."""
    if record.mode is TaskMode.MCQ_TAGGED:
        structured = parse_tagged(raw)
        answer = structured.answer_raw
        if answer is None:
            return Verdict.MALFORMED, structured
        if detect_abstention(answer, record.mode, record.idk_letter):
            return Verdict.ABSTAIN, structured
        if _answer_letter(answer) == record.answer_key.upper():
            return Verdict.CORRECT, structured
        return Verdict.INCORRECT, structured

    extracted = parse_boxed(raw)
    structured = StructuredOutput(None, extracted, extracted is not None)
    if extracted is None:
        return Verdict.MALFORMED, structured
    if detect_abstention(extracted, record.mode):
        return Verdict.ABSTAIN, structured
    if normalize_math(extracted) == normalize_math(record.answer_key):
        return Verdict.CORRECT, structured
    return Verdict.INCORRECT, structured
