"""Multiple-choice question records and their JSON-lines file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .ensemble import GROUPS, N_CHOICES, QUESTION_TYPES
from .regions import BoundingBox

DIFFICULTIES = ("easy", "hard")


class QuestionError(ValueError):
    pass


@dataclass(frozen=True)
class Question:
    id: str
    qtype: str
    difficulty: str
    prompt: str
    choices: tuple[str, ...]
    correct: int
    focus_box: BoundingBox | None = None
    image_id: str = ""

    def __post_init__(self):
        if self.qtype not in QUESTION_TYPES:
            raise QuestionError(f"{self.id}: unknown question type {self.qtype!r}")
        if self.difficulty not in DIFFICULTIES:
            raise QuestionError(f"{self.id}: difficulty must be easy or hard")
        object.__setattr__(self, "choices", tuple(self.choices))
        if len(self.choices) != N_CHOICES:
            raise QuestionError(f"{self.id}: expected {N_CHOICES} choices, got {len(self.choices)}")
        if not 0 <= self.correct < N_CHOICES:
            raise QuestionError(f"{self.id}: correct index {self.correct} outside 0..3")
        needs_box = GROUPS[self.qtype] != "a"
        if needs_box != (self.focus_box is not None):
            raise QuestionError(
                f"{self.id}: {self.qtype} questions "
                + ("need a focus box" if needs_box else "must not carry a focus box")
            )
        if not self.image_id:
            object.__setattr__(self, "image_id", self.id)

    @property
    def group(self) -> str:
        return GROUPS[self.qtype]

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "image_id": self.image_id,
            "qtype": self.qtype,
            "difficulty": self.difficulty,
            "prompt": self.prompt,
        }
        for i, c in enumerate(self.choices, start=1):
            rec[f"choice{i}"] = c
        rec["correct"] = self.correct
        if self.focus_box is not None:
            b = self.focus_box
            rec["focus_box"] = f"{b.x!r},{b.y!r},{b.w!r},{b.h!r}"
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Question":
        try:
            box = rec.get("focus_box")
            if box:
                x, y, w, h = (float(v) for v in box.split(","))
                box = BoundingBox(x, y, w, h, class_label="focus")
            return cls(
                id=str(rec["id"]),
                qtype=rec["qtype"],
                difficulty=rec["difficulty"],
                prompt=rec.get("prompt", ""),
                choices=tuple(rec[f"choice{i}"] for i in range(1, N_CHOICES + 1)),
                correct=int(rec["correct"]),
                focus_box=box or None,
                image_id=str(rec.get("image_id") or rec["id"]),
            )
        except KeyError as exc:
            raise QuestionError(f"question record missing field {exc}") from None


def load_questions(path) -> list[Question]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(Question.from_record(json.loads(line)))
            except (json.JSONDecodeError, QuestionError, ValueError) as exc:
                raise QuestionError(f"{path}:{lineno}: {exc}") from None
    return out


def save_questions(questions: Iterable[Question], path) -> None:
    lines = [json.dumps(q.to_record(), sort_keys=False) for q in questions]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
