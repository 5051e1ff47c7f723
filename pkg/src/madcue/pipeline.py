"""Per-question scoring: cue vectors, answer grounding and CCA model training data."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cca import CcaConfig, CcaModel, fit_cca, similarity, similarity_matrix
from .ensemble import (
    GROUPS,
    OBJECT_SCORE,
    PERSON_SCORE,
    REGION_SELECTION_TYPES,
    AnswerScores,
    EnsembleConfig,
    choose_answer,
    ensemble_scores,
)
from .features import (
    GT_BOX,
    WHOLE_IMAGE,
    FeatureRecord,
    FeatureStore,
    Region,
    pool_regions,
    stack_features,
)
from .questions import Question
from .regions import (
    KERNEL_POWER,
    MAX_OBJECT_CANDIDATES,
    PERSON_CONF_THRESHOLD,
    PERSON_MIN_SIDE,
    DetectionSet,
    SelectionResult,
    filter_person_boxes,
    kernel_score,
    object_candidates,
    select_object_box,
    select_person_box,
)
from .text import OBJECT, PERSON, EmbeddingTable, PhraseChunk, embed_text, extract_chunks, tokenize

SOURCES = ("image", "focus", "person", "object")
PERSON_SELECTOR = "person_select"
OBJECT_SELECTOR = "object_select"


class PipelineError(ValueError):
    pass


class MissingModelError(PipelineError):
    pass


@dataclass(frozen=True)
class CuePart:
    cue: str
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise PipelineError(f"unknown region source {self.source!r} (use {', '.join(SOURCES)})")

    @classmethod
    def parse(cls, text: str) -> "CuePart":
        cue, sep, source = text.strip().partition("@")
        if not sep or not cue:
            raise PipelineError(f"cue part {text!r} must look like <cue>@<source>")
        return cls(cue, source)

    def __str__(self) -> str:
        return f"{self.cue}@{self.source}"


@dataclass(frozen=True)
class CueModelSpec:
    """A CCA cue: the visual vector is the concatenation of its parts."""

    name: str
    parts: tuple[CuePart, ...]

    def __post_init__(self):
        if not self.parts:
            raise PipelineError(f"cue model {self.name} has no parts")

    def sources(self) -> set[str]:
        return {p.source for p in self.parts}

    def supports(self, qtype: str) -> bool:
        group = GROUPS[qtype]
        srcs = self.sources()
        if group == "a":
            if srcs & {"person", "object"}:
                return qtype in REGION_SELECTION_TYPES
            return "focus" not in srcs
        if group == "c":
            return "person" not in srcs
        return True


def _spec(name: str, *parts: str) -> CueModelSpec:
    return CueModelSpec(name, tuple(CuePart.parse(p) for p in parts))


DEFAULT_CUE_MODELS = {
    s.name: s
    for s in (
        _spec("baseline", "vgg_fc7@image"),
        _spec("places", "vgg_fc7@image", "places_fc7@image"),
        _spec("person_vgg", "vgg_fc7@image", "vgg_fc7@person"),
        _spec("hico", "vgg_fc7@image", "act_hico_fc7@person"),
        _spec("mpii", "vgg_fc7@image", "act_mpii_fc7@person"),
        _spec("attr", "vgg_fc7@image", "attr_fc7@person"),
        _spec("object_vgg", "vgg_fc7@image", "vgg_fc7@object"),
        _spec("color", "vgg_fc7@image", "color_fc7@object"),
        _spec("hico_mpii", "act_hico_labels@person", "act_mpii_labels@person"),
        _spec("label_stack", "act_hico_labels@person", "act_mpii_labels@person", "attr_labels@person"),
    )
}


@dataclass(frozen=True)
class SelectionSettings:
    person_cue: str = "attr_labels"
    object_cue: str = "vgg_fc7"
    conf_threshold: float = PERSON_CONF_THRESHOLD
    min_side: float = PERSON_MIN_SIDE
    max_candidates: int = MAX_OBJECT_CANDIDATES
    kernel_power: float = KERNEL_POWER


@dataclass
class Grounding:
    """Regions and selection scores supporting one candidate answer."""

    chunks: list[PhraseChunk]
    person_regions: list[Region]
    object_regions: list[Region]
    person_score: float = 0.0
    object_score: float = 0.0
    person_selections: list[SelectionResult] = field(default_factory=list)
    object_selections: list[SelectionResult] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


class Pipeline:
    """Immutable scoring context over loaded stores, text resources and selection models."""

    def __init__(
        self,
        store: FeatureStore,
        embeddings: EmbeddingTable,
        cue_models: Mapping[str, CueModelSpec] | None = None,
        detections: Mapping[str, DetectionSet] | None = None,
        person_vocab: Sequence[str] = (),
        object_vocab: Sequence[str] = (),
        person_model: CcaModel | None = None,
        object_model: CcaModel | None = None,
        selection: SelectionSettings = SelectionSettings(),
    ):
        self.store = store
        self.embeddings = embeddings
        self.cue_models = dict(DEFAULT_CUE_MODELS if cue_models is None else cue_models)
        self.detections = dict(detections or {})
        self.person_vocab = list(person_vocab)
        self.object_vocab = list(object_vocab)
        self.person_model = person_model
        self.object_model = object_model
        self.selection = selection

    # -- text -----------------------------------------------------------

    def text_vector(self, text_or_tokens) -> tuple[np.ndarray, float]:
        tokens = tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else list(text_or_tokens)
        if not tokens:
            return np.zeros(self.embeddings.dimension), 0.0
        return embed_text(self.embeddings, tokens)

    # -- grounding --------------------------------------------------------

    def needs_grounding(self, spec: CueModelSpec | None = None, ensemble: EnsembleConfig | None = None) -> bool:
        if spec is not None and spec.sources() & {"person", "object"}:
            return True
        return bool(ensemble is not None and ensemble.auxiliary)

    def ground_answer(self, image_id: str, answer: str) -> Grounding:
        """Pick person and object regions for the entities an answer mentions."""
        if not self.person_vocab or not self.object_vocab:
            raise PipelineError("region selection needs person and object vocabularies")
        chunks = extract_chunks(tokenize(answer), self.person_vocab, self.object_vocab)
        dets = self.detections.get(image_id) or DetectionSet(image_id)
        g = Grounding(chunks, [], [])
        self._ground_persons(image_id, dets, [c for c in chunks if c.kind == PERSON], g)
        self._ground_objects(image_id, dets, [c for c in chunks if c.kind == OBJECT], g)
        return g

    def _ground_persons(self, image_id, dets: DetectionSet, phrases, g: Grounding) -> None:
        s = self.selection
        boxes = filter_person_boxes(dets.persons, s.conf_threshold, s.min_side)
        feats = {}
        for b in boxes:
            vec = self.store.get(image_id, b.region, s.person_cue)
            if vec is not None:
                feats[b.region] = vec
        if not boxes:
            g.notes.append("no person detections survive filtering; using the whole image")
            whole = self.store.get(image_id, WHOLE_IMAGE, s.person_cue)
            feats = {} if whole is None else {WHOLE_IMAGE: whole}
        if not phrases:
            g.notes.append("no person phrase; all person boxes selected")
            members = [b.region for b in boxes if b.index is not None]
            g.person_regions = members or [WHOLE_IMAGE]
            return
        if self.person_model is None:
            raise MissingModelError("person phrases found but no person selection model is loaded")
        scores = []
        for chunk in phrases:
            phrase_vec, known = self.text_vector(chunk.tokens)
            if known == 0 or not feats:
                g.notes.append(f"cannot score person phrase {chunk.text!r}")
                continue
            res = select_person_box(self.person_model, feats, phrase_vec, chunk)
            g.person_selections.append(res)
            scores.append(res.score)
            if res.chosen not in g.person_regions:
                g.person_regions.append(res.chosen)
        if not g.person_regions:
            g.person_regions = [b.region for b in boxes if b.index is not None] or [WHOLE_IMAGE]
        g.person_score = float(np.mean(scores)) if scores else 0.0

    def _ground_objects(self, image_id, dets: DetectionSet, phrases, g: Grounding) -> None:
        s = self.selection
        feats = {}
        for b in object_candidates(dets.objects, s.max_candidates):
            vec = self.store.get(image_id, b.region, s.object_cue)
            if vec is not None:
                feats[b.region] = vec
        if not phrases or not feats:
            if phrases:
                g.notes.append("no object candidates; using the whole image")
            g.object_regions = [WHOLE_IMAGE]
            return
        if self.object_model is None:
            raise MissingModelError("object phrases found but no object selection model is loaded")
        phrase_vecs = []
        for chunk in phrases:
            phrase_vec, known = self.text_vector(chunk.tokens)
            if known == 0:
                g.notes.append(f"cannot score object phrase {chunk.text!r}")
                continue
            phrase_vecs.append(phrase_vec)
            res = select_object_box(self.object_model, feats, phrase_vec, s.max_candidates, chunk)
            g.object_selections.append(res)
            if res.chosen not in g.object_regions:
                g.object_regions.append(res.chosen)
        if not phrase_vecs:
            g.object_regions = [WHOLE_IMAGE]
            return
        cosines = similarity_matrix(self.object_model, list(feats.values()), phrase_vecs)
        g.object_score = kernel_score(cosines, s.kernel_power)

    # -- visual vectors ---------------------------------------------------

    def regions_for(self, question: Question, source: str, grounding: Grounding | None) -> list[Region]:
        if source == "image":
            return [WHOLE_IMAGE]
        if question.group != "a":
            return [GT_BOX]
        if source == "focus":
            raise PipelineError(f"{question.qtype} questions have no focus box")
        if grounding is None:
            raise PipelineError(f"cue source {source!r} needs answer grounding")
        return grounding.person_regions if source == "person" else grounding.object_regions

    def cue_vector(self, question: Question, spec: CueModelSpec, grounding: Grounding | None = None):
        """Stacked visual vector for one cue model, or None if any feature is missing."""
        parts = []
        for part in spec.parts:
            regions = self.regions_for(question, part.source, grounding)
            records = [self.store.record(question.image_id, r, part.cue) for r in regions]
            if any(r is None for r in records):
                return None
            if len(records) == 1:
                parts.append(records[0])
            else:
                parts.append(_pooled(records))
        return stack_features(parts)

    def spec(self, cue: str) -> CueModelSpec:
        try:
            return self.cue_models[cue]
        except KeyError:
            raise PipelineError(f"unknown cue model {cue!r}") from None

    # -- scoring ----------------------------------------------------------

    def score_question(
        self,
        question: Question,
        ensemble: EnsembleConfig,
        models: Mapping[tuple[str, str], CcaModel],
    ) -> AnswerScores | None:
        """Score all four answers; None when a cue lacks features for this question."""
        specs = [self.spec(c) for c in ensemble.cues]
        cca = []
        for cue in ensemble.cues:
            model = models.get((question.qtype, cue))
            if model is None:
                raise MissingModelError(f"no CCA model for question type {question.qtype}, cue {cue}")
            cca.append(model)

        grounded = question.group == "a" and (
            ensemble.auxiliary or any(self.needs_grounding(s) for s in specs)
        )
        groundings = [
            self.ground_answer(question.image_id, a) if grounded else None for a in question.choices
        ]
        text = [self.text_vector(a) for a in question.choices]

        per_cue = np.zeros((len(specs), len(question.choices)))
        for i, (spec, model) in enumerate(zip(specs, cca)):
            shared = None if self.needs_grounding(spec) else self.cue_vector(question, spec)
            for j, (y_vec, known) in enumerate(text):
                x_vec = self.cue_vector(question, spec, groundings[j]) if shared is None else shared
                if x_vec is None:
                    return None
                per_cue[i, j] = similarity(model, x_vec, y_vec) if known > 0 else 0.0

        aux = {}
        if PERSON_SCORE in ensemble.auxiliary:
            aux[PERSON_SCORE] = [g.person_score for g in groundings]
        if OBJECT_SCORE in ensemble.auxiliary:
            aux[OBJECT_SCORE] = [g.object_score for g in groundings]
        combined = ensemble_scores(ensemble, per_cue, aux)
        return AnswerScores(question.id, ensemble.cues, per_cue, combined, choose_answer(combined), aux)

    # -- training ---------------------------------------------------------

    def training_matrices(self, questions: Iterable[Question], cue: str):
        """(X, Y, n_skipped): visual vectors against correct-answer embeddings."""
        spec = self.spec(cue)
        xs, ys, skipped = [], [], 0
        for q in questions:
            answer = q.choices[q.correct]
            g = None
            if q.group == "a" and self.needs_grounding(spec):
                g = self.ground_answer(q.image_id, answer)
            x = self.cue_vector(q, spec, g)
            y, known = self.text_vector(answer)
            if x is None or known == 0:
                skipped += 1
                continue
            xs.append(x)
            ys.append(y)
        return _stack_rows(xs), _stack_rows(ys), skipped

    def fit_cue_model(self, questions: Sequence[Question], cue: str, config: CcaConfig) -> CcaModel:
        x, y, _ = self.training_matrices(questions, cue)
        if x.shape[0] < 2:
            raise PipelineError(f"cue {cue}: only {x.shape[0]} usable training questions")
        return fit_cca(x, y, config)


@dataclass(frozen=True)
class GroundingPair:
    """A phrase paired with the region that depicts it (selection-model training data)."""

    image_id: str
    region: Region
    kind: str
    phrase: str


def load_grounding_pairs(path) -> list[GroundingPair]:
    """Tab-separated ``image_id  region  kind  phrase`` lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4 or fields[2] not in (PERSON, OBJECT):
                raise PipelineError(f"{path}:{lineno}: expected image_id, region, person|object, phrase")
            out.append(GroundingPair(fields[0], Region.parse(fields[1]), fields[2], fields[3]))
    return out


def save_grounding_pairs(pairs: Iterable[GroundingPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.image_id}\t{p.region}\t{p.kind}\t{p.phrase}\n")


def fit_selection_model(
    pipeline: Pipeline, pairs: Iterable[GroundingPair], kind: str, config: CcaConfig
) -> CcaModel:
    cue = pipeline.selection.person_cue if kind == PERSON else pipeline.selection.object_cue
    xs, ys = [], []
    for p in pairs:
        if p.kind != kind:
            continue
        x = pipeline.store.get(p.image_id, p.region, cue)
        y, known = pipeline.text_vector(p.phrase)
        if x is None or known == 0:
            continue
        xs.append(x)
        ys.append(y)
    if len(xs) < 2:
        raise PipelineError(f"{kind} selection model: only {len(xs)} usable grounding pairs")
    return fit_cca(_stack_rows(xs), _stack_rows(ys), config)


def _pooled(records) -> FeatureRecord:
    first = records[0]
    return FeatureRecord(first.image_id, first.region, first.cue, pool_regions(records))


def _stack_rows(rows) -> np.ndarray:
    return np.stack(rows) if rows else np.zeros((0, 0))
