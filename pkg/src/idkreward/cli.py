"""Command-line entry point: ``idkreward {verify,transform,sweep,report}``.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
(``#`` starts a comment). Keys are option names with dashes or underscores;
flags given on the command line override file values. Unknown keys are errors.

Exit codes: 0 success, 2 usage/validation errors, 3 data-reference errors
(ids that do not resolve).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import re
import sys
from pathlib import Path
from typing import Sequence

from . import dataxform, evalmetrics, grposim
from .core import (
    DatasetFormatError,
    RewardConfig,
    Verdict,
    iter_jsonl,
    load_dataset,
    save_dataset,
    validate_dataset,
    write_jsonl,
)
from .reward import score_batch

log = logging.getLogger("idkreward")

EXIT_USAGE = 2
EXIT_REFERENCE = 3

BUNDLED_TASKS = Path(__file__).parent / "data" / "low_accuracy_tasks.jsonl"
_NEGATIVE_LIST = re.compile(r"^-(\d+\.?\d*|\.\d+)([,\s]+-?(\d+\.?\d*|\.\d+))*,?$")
SWEEP_COLUMNS = ("r_abs", "correct_pct", "incorrect_pct", "idk_pct", "mean_reward")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# --- config files ---------------------------------------------------------


def read_config(path) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def config_to_argv(values: dict[str, str], parser: argparse.ArgumentParser, source) -> list[str]:
    actions = parser._option_string_actions
    out = []
    for key, value in values.items():
        opt = "--" + key.replace("_", "-")
        action = actions.get(opt)
        if action is None or opt == "--config":
            raise CliError(f"{source}: unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                out.append(opt)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise CliError(f"{source}: {key} expects a boolean, got {value!r}")
        elif action.nargs in ("+", "*"):
            out.append(opt)
            out.extend(v for v in value.replace(",", " ").split())
        else:
            out.append(f"{opt}={value}")
    return out


# --- helpers --------------------------------------------------------------


def _float_list(values: Sequence[str]) -> list[float]:
    out = []
    for chunk in values:
        for piece in chunk.replace(",", " ").split():
            try:
                out.append(float(piece))
            except ValueError as exc:
                raise CliError(f"not a number: {piece!r}") from exc
    return out


def _load_responses(path) -> list[tuple[str, str]]:
    out = []
    for lineno, obj in iter_jsonl(path):
        if "question_id" not in obj or "raw_text" not in obj:
            raise DatasetFormatError(path, lineno, "response needs question_id and raw_text")
        out.append((str(obj["question_id"]), str(obj["raw_text"])))
    return out


def _load_verdicts(path) -> list[tuple[str, Verdict]]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append((str(obj["question_id"]), Verdict(obj["verdict"])))
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(path, lineno, f"bad verdict row: {exc}") from exc
    return out


def _load_valid_dataset(path):
    records = load_dataset(path)
    problems = validate_dataset(records)
    if problems:
        detail = "; ".join(f"{v.record_id}: {v.message}" for v in problems[:10])
        raise CliError(f"{path}: {len(problems)} invalid record(s): {detail}")
    return records


def _summary_line(counts: evalmetrics.EvalCounts) -> str:
    c, i, k, m, n = counts.as_tuple()
    return f"total {n}: correct {c}, incorrect {i}, idk {k}, malformed {m}"


# --- subcommands ----------------------------------------------------------


def cmd_verify(args) -> int:
    records = _load_valid_dataset(args.dataset)
    responses = _load_responses(args.responses)
    config = RewardConfig(
        r_abs=args.r_abs,
        r_correct=args.r_correct,
        r_wrong=args.r_wrong,
        format_bonus=args.format_bonus,
    )
    scored = score_batch(responses, records, config)
    unknown = [s.question_id for s in scored if s.error is not None]
    if unknown:
        raise CliError(f"unknown question_id(s): {', '.join(unknown)}", EXIT_REFERENCE)

    write_jsonl(
        args.out,
        (
            {
                "question_id": s.question_id,
                "verdict": s.verdict.value,
                "answer_extracted": s.structured.answer_raw,
                "format_ok": s.structured.format_ok,
            }
            for s in scored
        ),
    )
    if args.scored:
        write_jsonl(args.scored, (s.to_dict() for s in scored))

    counts = evalmetrics.tally(s.verdict for s in scored)
    print(_summary_line(counts))
    if scored:
        mean_total = sum(s.breakdown.total for s in scored) / len(scored)
        print(f"mean reward {mean_total:.4f}")
    return 0


def cmd_transform(args) -> int:
    records = _load_valid_dataset(args.dataset)

    if args.inject_idk:
        try:
            out = [dataxform.inject_idk_option(r) for r in records]
        except ValueError as exc:
            raise CliError(str(exc)) from exc
        unchanged = sum(a is b for a, b in zip(records, out))
        if unchanged:
            print(f"warning: {unchanged} record(s) already had an abstention option; left unchanged",
                  file=sys.stderr)
        save_dataset(args.out, out)
        print(f"records {len(out)}: augmented {len(out) - unchanged}, unchanged {unchanged}")
        return 0

    if args.sft_random is not None:
        try:
            labels = dataxform.make_sft_random(records, args.sft_random, args.seed)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    else:
        verdicts = dict(_load_verdicts(args.sft_rtuning))
        try:
            labels = dataxform.make_sft_rtuning(records, verdicts)
        except dataxform.MissingVerdictsError as exc:
            raise CliError(
                f"missing base verdicts for id(s): {', '.join(exc.missing)}", EXIT_REFERENCE
            ) from exc

    write_jsonl(args.out, (lab.to_dict() for lab in labels))
    n_abstain = sum(lab.target is dataxform.SftTarget.ABSTAIN for lab in labels)
    print(f"labels {len(labels)}: abstain {n_abstain}, answer_key {len(labels) - n_abstain}")
    return 0


def sweep_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r_abs, res in results:
        c, i, k = res.final_fractions
        writer.writerow([f"{r_abs:g}", f"{c:.2f}", f"{i:.2f}", f"{k:.2f}", f"{res.mean_reward:.4f}"])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    values = _float_list(args.rabs or [])
    if not values:
        raise CliError("--rabs needs at least one value")
    tasks = grposim.load_tasks(args.tasks)
    if not tasks:
        raise CliError(f"{args.tasks}: no tasks")
    try:
        config = grposim.SimConfig(
            group_size=args.group_size,
            learning_rate=args.learning_rate,
            steps=args.steps,
            epsilon_std=args.epsilon_std,
            kl_beta=args.kl_beta,
            sft_steps=args.sft_steps,
            sft_ratio=args.sft_ratio,
            seed=args.seed,
            init_abstain_prob=args.init_abstain,
            eval_rollouts=args.rollouts,
            exact_eval=args.exact_eval,
        )
        results = grposim.sweep_rabs(tasks, config, values, workers=args.workers)
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    text = sweep_csv(results)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if args.svg:
        from .plotting import plot_sweep

        rows = [(v, *res.final_fractions) for v, res in results]
        plot_sweep(rows, args.svg, title=f"{len(tasks)} tasks, {config.steps} steps")
    return 0


def cmd_report(args) -> int:
    paths = args.verdicts
    labels = args.labels if args.labels is not None else [Path(p).stem for p in paths]
    if len(labels) != len(paths):
        raise CliError(f"{len(paths)} verdict file(s) but {len(labels)} label(s)")
    rows = []
    for label, path in zip(labels, paths):
        rows.append((label, evalmetrics.tally(v for _, v in _load_verdicts(path))))
    table, csv_text = evalmetrics.render_report(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(csv_text, encoding="utf-8")
    if args.figure:
        from .plotting import plot_metrics

        metrics = [
            (
                evalmetrics.accuracy(c) if c.n_total else None,
                evalmetrics.adjusted_accuracy(c),
                evalmetrics.abstention_recall(c),
            )
            for _, c in rows
        ]
        plot_metrics(labels, metrics, args.figure)
    return 0


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idkreward", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; command-line flags override it")

    p = sub.add_parser("verify", parents=[common], help="classify and score model responses")
    p.add_argument("dataset", help="question records (JSON-lines)")
    p.add_argument("responses", help="{question_id, raw_text} JSON-lines")
    p.add_argument("-o", "--out", default="verdicts.jsonl", help="verdicts output (default: %(default)s)")
    p.add_argument("--scored", help="also write per-item rewards here")
    p.add_argument("--r-abs", type=float, default=0.0)
    p.add_argument("--r-correct", type=float, default=1.0)
    p.add_argument("--r-wrong", type=float, default=-1.0)
    p.add_argument("--format-bonus", type=float, default=0.5)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("transform", parents=[common], help="build IDK-augmented data or SFT labels")
    p.add_argument("dataset")
    p.add_argument("-o", "--out", required=True)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--inject-idk", action="store_true", help="append an \"I Don't Know\" option")
    mode.add_argument("--sft-random", type=float, metavar="RATIO", help="abstain on exactly round(RATIO*N) random items")
    mode.add_argument("--sft-rtuning", metavar="VERDICTS", help="abstain where the base model was not correct")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default: %(default)s)")
    p.set_defaults(func=cmd_transform)

    d = grposim.SimConfig()
    p = sub.add_parser("sweep", parents=[common], help="simulate GRPO across abstention rewards")
    p.add_argument("tasks", nargs="?", default=str(BUNDLED_TASKS),
                   help="synthetic tasks JSON-lines (default: bundled low-accuracy set)")
    p.add_argument("--rabs", nargs="+", metavar="R", help="abstention reward values (space or comma separated)")
    p.add_argument("-o", "--out", help="CSV output (always echoed to stdout)")
    p.add_argument("--svg", help="figure of the three fractions vs r_abs (.svg or .png)")
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--group-size", type=int, default=d.group_size)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--init-abstain", type=float, default=d.init_abstain_prob,
                   help="initial abstain probability per task (default: %(default)s)")
    p.add_argument("--kl-beta", type=float, default=d.kl_beta)
    p.add_argument("--epsilon-std", type=float, default=d.epsilon_std)
    p.add_argument("--sft-steps", type=int, default=d.sft_steps)
    p.add_argument("--sft-ratio", type=float, default=d.sft_ratio)
    p.add_argument("--rollouts", type=int, default=d.eval_rollouts, help="evaluation rollouts per task")
    p.add_argument("--exact-eval", action="store_true", help="report exact expectations instead of rollouts")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    # let "--rabs -0.5,-0.25" through as values rather than option flags
    p._negative_number_matcher = _NEGATIVE_LIST

    p = sub.add_parser("report", parents=[common], help="render the metric table for verdict files")
    p.add_argument("verdicts", nargs="+")
    p.add_argument("--labels", nargs="+")
    p.add_argument("-o", "--out", help="CSV output")
    p.add_argument("--figure", help="grouped bar chart of the three metrics (.svg or .png)")
    p.set_defaults(func=cmd_report)
    return parser


def _parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        idx = argv.index(args.command)
        extra = config_to_argv(read_config(args.config), subparser, args.config)
        args = parser.parse_args(argv[: idx + 1] + extra + argv[idx + 1 :])
    return args


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except CliError as exc:
        print(f"idkreward: error: {exc}", file=sys.stderr)
        return exc.code
    except DatasetFormatError as exc:
        print(f"idkreward: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"idkreward: error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
