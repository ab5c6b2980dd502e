from pathlib import Path

import pytest

from idkreward.core import QuestionRecord, TaskMode, load_dataset

DATA = Path(__file__).parent / "data"

# filled by test_acceptance.py, printed after the run
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def appendix_records():
    return {r.id: r for r in load_dataset(DATA / "appendix_records.jsonl")}


@pytest.fixture
def mcq_record():
    return QuestionRecord(
        id="q1",
        prompt="Which?",
        options=(("A", "alpha"), ("B", "beta"), ("C", "gamma"), ("D", "delta")),
        answer_key="B",
        mode=TaskMode.MCQ_TAGGED,
    )


@pytest.fixture
def open_record():
    return QuestionRecord(id="m1", prompt="Compute.", answer_key="\\frac{1}{2}", mode=TaskMode.OPEN_BOXED)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
