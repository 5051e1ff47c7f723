"""Weighted combination of per-cue CCA scores over the four candidate answers."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

N_CHOICES = 4
AUX_WEIGHT = 0.1
MINOR_WEIGHT = 0.1

PERSON_SCORE = "person_score"
OBJECT_SCORE = "object_score"
AUXILIARY_ORDER = (PERSON_SCORE, OBJECT_SCORE)

WHOLE_IMAGE_TYPES = ("Scene", "Emotion", "Interesting", "Past", "Future")
PERSON_TYPES = ("PersonAttribute", "PersonAction", "PersonLocation", "PersonObjectRelation")
OBJECT_TYPES = ("ObjectAttribute", "ObjectAffordance", "ObjectLocation")
QUESTION_TYPES = WHOLE_IMAGE_TYPES + PERSON_TYPES + OBJECT_TYPES
GROUPS = {**{t: "a" for t in WHOLE_IMAGE_TYPES}, **{t: "b" for t in PERSON_TYPES},
          **{t: "c" for t in OBJECT_TYPES}}
# whole-image types whose answers mention people and objects often enough to ground
REGION_SELECTION_TYPES = ("Interesting", "Past", "Future")


class EnsembleConfigError(ValueError):
    pass


@dataclass
class AnswerScores:
    question_id: str
    cues: tuple[str, ...]
    per_cue: np.ndarray
    combined: np.ndarray
    chosen: int
    auxiliary: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "per_cue": {c: row.tolist() for c, row in zip(self.cues, self.per_cue)},
            "auxiliary": self.auxiliary,
            "auxiliary_order": ["main_combination", *self.auxiliary],
            "combined": self.combined.tolist(),
            "chosen": self.chosen,
        }


def combination_weights(n_cues: int, preferred_index: int) -> np.ndarray:
    """Preferred cue gets ``1 - (C-1) * 0.1``; every other cue gets 0.1."""
    if n_cues < 1:
        raise EnsembleConfigError(f"need at least one cue, got {n_cues}")
    if n_cues > 10:
        raise EnsembleConfigError(
            f"{n_cues} cues leave the preferred cue a non-positive weight (max 10)"
        )
    if not 0 <= preferred_index < n_cues:
        raise EnsembleConfigError(f"preferred index {preferred_index} outside 0..{n_cues - 1}")
    weights = np.full(n_cues, MINOR_WEIGHT)
    weights[preferred_index] = 1.0 - (n_cues - 1) * MINOR_WEIGHT
    return weights


@dataclass(frozen=True)
class EnsembleConfig:
    question_type: str
    cues: tuple[str, ...]
    preferred_index: int = 0
    auxiliary: tuple[str, ...] = ()
    standardize: bool = False
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.question_type not in QUESTION_TYPES:
            raise EnsembleConfigError(f"unknown question type {self.question_type!r}")
        object.__setattr__(self, "cues", tuple(self.cues))
        if len(set(self.cues)) != len(self.cues):
            raise EnsembleConfigError(f"{self.question_type}: duplicate cue in {self.cues}")
        aux = tuple(self.auxiliary)
        for a in aux:
            if a not in AUXILIARY_ORDER:
                raise EnsembleConfigError(f"{self.question_type}: unknown auxiliary score {a!r}")
        if aux and GROUPS[self.question_type] != "a":
            raise EnsembleConfigError(
                f"{self.question_type}: auxiliary scores need region selection, "
                "which only whole-image question types use"
            )
        object.__setattr__(self, "auxiliary", tuple(a for a in AUXILIARY_ORDER if a in aux))
        w = combination_weights(len(self.cues), self.preferred_index)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def preferred(self) -> str:
        return self.cues[self.preferred_index]

    @classmethod
    def single(cls, question_type: str, cue: str) -> "EnsembleConfig":
        return cls(question_type, (cue,), 0)


def combine_scores(per_cue, weights) -> np.ndarray:
    """Weighted column sums of a C x 4 score matrix."""
    s = np.asarray(per_cue, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if s.ndim != 2 or w.ndim != 1 or s.shape[0] != w.shape[0]:
        raise ValueError(f"score matrix {s.shape} does not match weights {w.shape}")
    return w @ s


def choose_answer(combined) -> int:
    """Index of the highest score; the lowest index wins ties."""
    c = np.asarray(combined, dtype=np.float64)
    if c.shape != (N_CHOICES,):
        raise ValueError(f"expected {N_CHOICES} scores, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError(f"non-finite answer scores {c.tolist()}")
    return int(np.argmax(c))


def attach_auxiliary(combined, auxiliary) -> np.ndarray:
    c = np.asarray(combined, dtype=np.float64)
    a = np.asarray(auxiliary, dtype=np.float64)
    if c.shape != a.shape or c.shape != (N_CHOICES,):
        raise ValueError(f"cannot mix scores of shapes {c.shape} and {a.shape}")
    return (1.0 - AUX_WEIGHT) * c + AUX_WEIGHT * a


def standardize_rows(per_cue) -> np.ndarray:
    """Z-score each cue's row across the answers (constant rows become zero)."""
    s = np.asarray(per_cue, dtype=np.float64)
    mu = s.mean(axis=1, keepdims=True)
    sd = s.std(axis=1, keepdims=True)
    return np.divide(s - mu, sd, out=np.zeros_like(s), where=sd > 1e-12)


def ensemble_scores(config: EnsembleConfig, per_cue, auxiliary: Mapping[str, Sequence[float]] = {}):
    """Main weighted combination, then each auxiliary mix in ``AUXILIARY_ORDER``."""
    s = standardize_rows(per_cue) if config.standardize else np.asarray(per_cue, dtype=np.float64)
    combined = combine_scores(s, config.weights)
    for name in config.auxiliary:
        combined = attach_auxiliary(combined, auxiliary[name])
    return combined


# Rosters follow the per-group ensembles; preferred cue is the best single cue per type.
_A_ROSTER = ("places", "person_vgg", "object_vgg", "label_stack")
_B_ROSTER = ("places", "person_vgg", "label_stack")
_C_ROSTER = ("places", "object_vgg", "color")
_PREFERRED = {
    "Interesting": "label_stack",
    "Past": "label_stack",
    "Future": "label_stack",
    "PersonAttribute": "label_stack",
    "PersonAction": "label_stack",
    "PersonLocation": "places",
    "PersonObjectRelation": "label_stack",
    "ObjectAttribute": "color",
    "ObjectAffordance": "object_vgg",
    "ObjectLocation": "places",
}


def default_ensembles() -> dict[str, EnsembleConfig]:
    out = {t: EnsembleConfig(t, ("places",)) for t in ("Scene", "Emotion")}
    for t in ("Interesting", "Past", "Future"):
        out[t] = EnsembleConfig(t, _A_ROSTER, _A_ROSTER.index(_PREFERRED[t]), (PERSON_SCORE,))
    for t in PERSON_TYPES:
        out[t] = EnsembleConfig(t, _B_ROSTER, _B_ROSTER.index(_PREFERRED[t]))
    for t in OBJECT_TYPES:
        out[t] = EnsembleConfig(t, _C_ROSTER, _C_ROSTER.index(_PREFERRED[t]))
    return out


def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.replace("\n", ",").split(",") if v.strip()]


def parse_ensembles(
    parser: configparser.ConfigParser,
    known_cues: Iterable[str],
    base: Mapping[str, EnsembleConfig] | None = None,
) -> dict[str, EnsembleConfig]:
    """Read ``[ensemble.<QuestionType>]`` sections on top of ``base``.

    Keys: ``cues`` (comma list), ``preferred`` (cue name), ``auxiliary``
    (comma list of person_score/object_score), ``standardize`` (bool).
    """
    known = set(known_cues)
    out = dict(default_ensembles() if base is None else base)
    for section in parser.sections():
        if not section.startswith("ensemble."):
            continue
        qtype = section.split(".", 1)[1]
        if qtype not in QUESTION_TYPES:
            raise EnsembleConfigError(f"[{section}]: unknown question type {qtype!r}")
        sec = parser[section]
        cues = _split_list(sec.get("cues", ""))
        if not cues:
            raise EnsembleConfigError(f"[{section}]: 'cues' is required")
        unknown = [c for c in cues if c not in known]
        if unknown:
            raise EnsembleConfigError(
                f"[{section}]: unknown cue model(s) {', '.join(unknown)}; "
                f"known: {', '.join(sorted(known))}"
            )
        preferred = sec.get("preferred", cues[0]).strip()
        if preferred not in cues:
            raise EnsembleConfigError(f"[{section}]: preferred cue {preferred!r} is not in cues")
        try:
            out[qtype] = EnsembleConfig(
                qtype,
                tuple(cues),
                cues.index(preferred),
                tuple(_split_list(sec.get("auxiliary", ""))),
                sec.getboolean("standardize", fallback=False),
            )
        except EnsembleConfigError as exc:
            raise EnsembleConfigError(f"[{section}]: {exc}") from None
    for cfg in out.values():
        unknown = [c for c in cfg.cues if c not in known]
        if unknown:
            raise EnsembleConfigError(
                f"ensemble for {cfg.question_type} uses unknown cue model(s) {', '.join(unknown)}"
            )
    return out


def format_ensembles(ensembles: Mapping[str, EnsembleConfig]) -> str:
    """Inverse of :func:`parse_ensembles` (INI text)."""
    lines = []
    for qtype, cfg in ensembles.items():
        lines.append(f"[ensemble.{qtype}]")
        lines.append(f"cues = {', '.join(cfg.cues)}")
        lines.append(f"preferred = {cfg.preferred}")
        if cfg.auxiliary:
            lines.append(f"auxiliary = {', '.join(cfg.auxiliary)}")
        if cfg.standardize:
            lines.append("standardize = true")
        lines.append("")
    return "\n".join(lines)
