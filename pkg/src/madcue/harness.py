"""Evaluation over question sets and Madlibs-style accuracy tables."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .cca import CcaModel
from .ensemble import GROUPS, QUESTION_TYPES, EnsembleConfig
from .pipeline import MissingModelError, Pipeline
from .questions import DIFFICULTIES, Question

GROUP_ORDER = ("a", "b", "c")


@dataclass
class Cell:
    correct: int = 0
    total: int = 0
    skipped: int = 0

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.total if self.total else None


class AccuracyTable:
    """Counts keyed by (question type, difficulty, configuration name)."""

    def __init__(self, columns: Sequence[str] = ()):
        self.columns = list(columns)
        self.rows: dict[tuple[str, str, str], Cell] = {}

    def cell(self, qtype: str, difficulty: str, column: str) -> Cell:
        if column not in self.columns:
            self.columns.append(column)
        return self.rows.setdefault((qtype, difficulty, column), Cell())

    def record(self, qtype: str, difficulty: str, column: str, outcome: bool | None) -> None:
        """``outcome`` None means the question was skipped."""
        c = self.cell(qtype, difficulty, column)
        if outcome is None:
            c.skipped += 1
        else:
            c.total += 1
            c.correct += int(outcome)

    def accuracy(self, qtype: str, difficulty: str, column: str) -> float | None:
        c = self.rows.get((qtype, difficulty, column))
        return None if c is None else c.accuracy

    def overall(self, column: str, difficulty: str | None = None) -> float | None:
        correct = total = 0
        for (_, d, col), c in self.rows.items():
            if col == column and (difficulty is None or d == difficulty):
                correct += c.correct
                total += c.total
        return correct / total if total else None

    def row_keys(self) -> list[tuple[str, str]]:
        present = {(q, d) for q, d, _ in self.rows}
        return [(q, d) for q in QUESTION_TYPES for d in DIFFICULTIES if (q, d) in present]

    def __eq__(self, other) -> bool:
        return isinstance(other, AccuracyTable) and self.columns == other.columns and self.rows == other.rows


def evaluate(
    questions: Sequence[Question],
    pipeline: Pipeline,
    models: Mapping[tuple[str, str], CcaModel],
    configs: Mapping[str, Mapping[str, EnsembleConfig]],
    threads: int = 1,
    score_log: list | None = None,
) -> AccuracyTable:
    """Answer every question under every named configuration and tally accuracy.

    ``configs`` maps a column name to per-question-type ensemble settings; a
    question type missing from a column leaves that cell empty. Questions with
    missing features are counted as skipped.
    """
    for column, per_type in configs.items():
        for qtype, cfg in per_type.items():
            if not any(q.qtype == qtype for q in questions):
                continue
            for cue in cfg.cues:
                if (qtype, cue) not in models:
                    raise MissingModelError(
                        f"column {column}: no CCA model for question type {qtype}, cue {cue}"
                    )

    def run(question: Question):
        out = []
        for column, per_type in configs.items():
            cfg = per_type.get(question.qtype)
            if cfg is None:
                continue
            scores = pipeline.score_question(question, cfg, models)
            out.append((column, scores))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, questions))
    else:
        results = [run(q) for q in questions]

    table = AccuracyTable(configs.keys())
    for question, outcome in zip(questions, results):
        for column, scores in outcome:
            hit = None if scores is None else scores.chosen == question.correct
            table.record(question.qtype, question.difficulty, column, hit)
            if score_log is not None:
                entry = {"column": column, "question_id": question.id, "correct": question.correct}
                entry.update({"skipped": True} if scores is None else scores.to_dict())
                score_log.append(entry)
    return table


_GROUP_LABEL = {"a": "a)", "b": "b)", "c": "c)"}


def _fmt(acc: float | None) -> str:
    return "--" if acc is None else f"{100.0 * acc:.2f}"


def render_table(table: AccuracyTable, fmt: str = "text") -> str:
    """Rows grouped a/b/c with easy/hard sub-rows; one accuracy column per configuration."""
    columns = list(table.columns)
    body = []
    for qtype, diff in table.row_keys():
        cells = [table.rows.get((qtype, diff, c)) for c in columns]
        body.append((GROUPS[qtype], qtype, diff, cells))

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["group", "question_type", "difficulty"]
        for c in columns:
            header += [c, f"{c}:correct", f"{c}:total", f"{c}:skipped"]
        w.writerow(header)
        for group, qtype, diff, cells in body:
            row = [group, qtype, diff]
            for cell in cells:
                if cell is None:
                    row += ["--", "", "", ""]
                else:
                    row += [_fmt(cell.accuracy), cell.correct, cell.total, cell.skipped]
            w.writerow(row)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown table format {fmt!r}")

    head = ["", "Question Type", "Difficulty", *columns]
    rows = []
    last_group = last_type = None
    for group, qtype, diff, cells in body:
        rows.append([
            _GROUP_LABEL[group] if group != last_group else "",
            qtype if qtype != last_type else "",
            diff.capitalize(),
            *(_fmt(None if c is None else c.accuracy) for c in cells),
        ])
        last_group, last_type = group, qtype
    widths = [max(len(str(r[i])) for r in [head, *rows]) for i in range(len(head))]

    def line(r):
        left = [str(v).ljust(widths[i]) for i, v in enumerate(r[:3])]
        right = [str(v).rjust(widths[i + 3]) for i, v in enumerate(r[3:])]
        return "  ".join(left + right).rstrip()

    out = [line(head), "-" * len(line(head))]
    prev = None
    for r, (group, *_rest) in zip(rows, body):
        if prev is not None and group != prev:
            out.append("-" * len(line(head)))
        out.append(line(r))
        prev = group
    skipped = {c: sum(cell.skipped for (_, _, col), cell in table.rows.items() if col == c) for c in columns}
    if any(skipped.values()):
        out.append("skipped: " + ", ".join(f"{c}={n}" for c, n in skipped.items()))
    return "\n".join(out) + "\n"
