"""Verdict tallies, the three evaluation metrics, and the distribution report.

Metrics whose denominator is empty return ``None`` (not applicable), so a
full-abstention row reports no adjusted accuracy rather than 0 or 1.
Malformed outputs count as failed answers alongside incorrect ones.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import Verdict


class EmptyEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalCounts:
    n_correct: int = 0
    n_incorrect: int = 0
    n_idk: int = 0
    n_malformed: int = 0

    def __post_init__(self):
        if min(self.n_correct, self.n_incorrect, self.n_idk, self.n_malformed) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def n_total(self) -> int:
        return self.n_correct + self.n_incorrect + self.n_idk + self.n_malformed

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(
            self.n_correct + other.n_correct,
            self.n_incorrect + other.n_incorrect,
            self.n_idk + other.n_idk,
            self.n_malformed + other.n_malformed,
        )

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.n_correct, self.n_incorrect, self.n_idk, self.n_malformed, self.n_total)


def tally(verdicts: Iterable[Verdict]) -> EvalCounts:
    c = Counter(Verdict(v) for v in verdicts)
    return EvalCounts(c[Verdict.CORRECT], c[Verdict.INCORRECT], c[Verdict.ABSTAIN], c[Verdict.MALFORMED])


def accuracy(counts: EvalCounts) -> float:
    if counts.n_total == 0:
        raise EmptyEvaluationError("empty evaluation")
    return counts.n_correct / counts.n_total


def adjusted_accuracy(counts: EvalCounts) -> float | None:
    """Correct among attempted answers; None when everything abstained."""
    attempted = counts.n_correct + counts.n_incorrect + counts.n_malformed
    return counts.n_correct / attempted if attempted else None


def abstention_recall(counts: EvalCounts) -> float | None:
    failed_or_idk = counts.n_idk + counts.n_incorrect + counts.n_malformed
    return counts.n_idk / failed_or_idk if failed_or_idk else None


def rounded_percentages(counts: EvalCounts) -> tuple[float, float, float, float]:
    """Percentages to one decimal, largest-remainder rounded so they sum to 100.0."""
    values = (counts.n_correct, counts.n_incorrect, counts.n_idk, counts.n_malformed)
    total = counts.n_total
    if total == 0:
        return (0.0, 0.0, 0.0, 0.0)
    tenths = [1000 * v / total for v in values]
    floors = [math.floor(t) for t in tenths]
    short = 1000 - sum(floors)
    order = sorted(range(4), key=lambda i: (-(tenths[i] - floors[i]), i))
    for i in order[:short]:
        floors[i] += 1
    return tuple(f / 10 for f in floors)


def _fmt(value: float | None, blank: str) -> str:
    return blank if value is None else f"{value:.3f}"


CSV_COLUMNS = (
    "label",
    "correct_pct",
    "incorrect_pct",
    "idk_pct",
    "malformed_pct",
    "accuracy",
    "adjusted_accuracy",
    "abstention_recall",
)


def render_report(rows: Sequence[tuple[str, EvalCounts]]) -> tuple[str, str]:
    """Return ``(table_text, csv_text)``; one line/row per label."""
    width = max([len("label")] + [len(label) for label, _ in rows])
    lines = [f"{'label':<{width}}  correct incorrect idk | accuracy adjusted_accuracy abstention_recall"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for label, counts in rows:
        pc, pi, pk, pm = rounded_percentages(counts)
        acc = accuracy(counts) if counts.n_total else None
        adj = adjusted_accuracy(counts)
        rec = abstention_recall(counts)
        line = (
            f"{label:<{width}}  {pc:.1f} {pi:.1f} {pk:.1f} | acc {_fmt(acc, 'n/a')} "
            f"adjacc {_fmt(adj, 'n/a')} absrec {_fmt(rec, 'n/a')}"
        )
        if counts.n_malformed:
            line += f" | malformed {pm:.1f}"
        lines.append(line)
        writer.writerow(
            [label, f"{pc:.1f}", f"{pi:.1f}", f"{pk:.1f}", f"{pm:.1f}",
             _fmt(acc, ""), _fmt(adj, ""), _fmt(rec, "")]
        )
    return "\n".join(lines) + "\n", buf.getvalue()
