"""Planted-structure synthetic datasets for desk-scale verification.

Every image carries a latent vector shared with its correct answer. Answers are
built from content words whose embeddings are linear in per-word latents; the
image's latent is the (scaled) sum of the correct answer's word latents, so
features of any cue are informative about the right choice to the degree set
by ``signal_correlation``. Hard ("near miss") distractors reuse all but one of
the correct answer's content words.

For whole-image question types that ground answers, each image also gets
person and object detections; the correct answer names the phrase planted in
one person box and one object box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .ensemble import GROUPS, REGION_SELECTION_TYPES
from .features import (
    GT_BOX,
    UNION_BOX,
    WHOLE_IMAGE,
    CueKind,
    FeatureRecord,
    FeatureStore,
    Region,
    cue_registry,
    write_feature_file,
)
from .pipeline import GroundingPair, SelectionSettings, save_grounding_pairs
from .questions import Question, save_questions
from .regions import BoundingBox, DetectionSet, write_detections
from .text import OBJECT, PERSON, EmbeddingTable, save_embeddings

DISTRACTOR_MODES = ("independent", "near_miss", "mixed")

PERSON_NOUNS = ("man", "woman", "girl", "boy", "child", "lady", "baby")
PERSON_ADJECTIVES = ("young", "old", "tall", "smiling", "blond")
OBJECT_NOUNS = (
    "dog", "cat", "car", "bicycle", "table", "chair", "cup", "ball", "kite", "umbrella",
    "horse", "bench", "frisbee", "pizza", "laptop", "book", "clock", "boat", "train", "bus",
)
OBJECT_PHRASES = ("teddy bear", "fire hydrant", "traffic light", "cell phone")

PROMPTS = {
    "Scene": "The place is ___.",
    "Emotion": "When I look at this image, I feel ___.",
    "Interesting": "The most interesting aspect of this image is ___.",
    "Past": "One or two seconds before this picture was taken, ___.",
    "Future": "One or two seconds after this picture was taken, ___.",
    "PersonAttribute": "The person is ___.",
    "PersonAction": "The person is ___.",
    "PersonLocation": "The person is ___.",
    "PersonObjectRelation": "The person is ___ the object.",
    "ObjectAttribute": "The object is ___.",
    "ObjectAffordance": "People could ___ the object.",
    "ObjectLocation": "The object is ___.",
}


def _default_cue_dims() -> dict[str, int]:
    return {name: 32 for name in cue_registry()}


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    n_train: int = 1000
    n_test: int = 500
    cue_dims: Mapping[str, int] = field(default_factory=_default_cue_dims)
    latent_dim: int = 8
    signal_correlation: float = 0.9
    noise_scale: float = 1.0
    distractor_mode: str = "independent"
    question_types: tuple[str, ...] = ("Scene", "PersonAction", "ObjectAttribute", "Interesting")
    # per-cue multiplier on the planted signal (0 makes a pure-noise cue)
    cue_signal: Mapping[str, float] = field(default_factory=dict)
    # per-cue [start, stop) slice of the latent the cue can see
    cue_latent: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    text_dim: int = 300
    text_noise: float = 0.05
    vocab_size: int = 400
    answer_words: int = 3
    n_grounding: int = 1000

    def __post_init__(self):
        for name in ("n_train", "n_test", "latent_dim", "text_dim", "vocab_size", "answer_words"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 < self.signal_correlation < 1.0:
            raise ValueError("signal_correlation must lie strictly inside (0, 1)")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be > 0")
        if self.distractor_mode not in DISTRACTOR_MODES:
            raise ValueError(f"distractor_mode must be one of {DISTRACTOR_MODES}")
        if self.text_dim < 3 * self.latent_dim:
            raise ValueError("text_dim must be at least 3 * latent_dim")
        if self.answer_words < 2 and self.distractor_mode != "independent":
            raise ValueError("near-miss distractors need answer_words >= 2")
        if not self.cue_dims:
            raise ValueError("cue_dims must name at least one cue")
        for cue, (lo, hi) in self.cue_latent.items():
            if not 0 <= lo < hi <= self.latent_dim:
                raise ValueError(f"cue_latent[{cue}] = {(lo, hi)} outside the latent")
        object.__setattr__(self, "question_types", tuple(self.question_types))
        for t in self.question_types:
            if t not in GROUPS:
                raise ValueError(f"unknown question type {t!r}")


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    registry: dict[str, CueKind]
    store: FeatureStore
    embeddings: EmbeddingTable
    train: list[Question]
    test: list[Question]
    detections: dict[str, DetectionSet]
    person_vocab: list[str]
    object_vocab: list[str]
    grounding: list[GroundingPair]
    planted: dict[str, dict[str, Region]] = field(default_factory=dict)


def person_labels() -> list[str]:
    return [*PERSON_NOUNS, *(f"{a} {n}" for a in PERSON_ADJECTIVES for n in PERSON_NOUNS)]


def object_labels() -> list[str]:
    return [*OBJECT_NOUNS, *OBJECT_PHRASES]


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    g = rng.standard_normal((rows, cols))
    if rows >= cols:
        q, _ = np.linalg.qr(g)
        return q
    return g / np.sqrt(cols)


class _World:
    """Fixed generative maps shared by the dataset and the selection trials."""

    SPACES = ("content", PERSON, OBJECT)

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        rng = np.random.default_rng([spec.seed, 0])
        L = spec.latent_dim
        self.registry = cue_registry(spec.cue_dims)
        self.cues = list(spec.cue_dims)

        self.content_words = [f"w{i:04d}" for i in range(spec.vocab_size)]
        self.content_latent = rng.standard_normal((spec.vocab_size, L))
        self.person_labels = person_labels()
        self.object_labels = object_labels()
        person_words = list(dict.fromkeys(w for lab in self.person_labels for w in lab.split()))
        object_words = list(dict.fromkeys(w for lab in self.object_labels for w in lab.split()))
        self.word_latent = {w: rng.standard_normal(L) for w in person_words + object_words}
        self.word_space = {**{w: PERSON for w in person_words}, **{w: OBJECT for w in object_words}}

        basis = _orthonormal(rng, spec.text_dim, 3 * L)
        self.text_maps = {s: basis[:, i * L:(i + 1) * L] for i, s in enumerate(self.SPACES)}
        vectors = {}
        for w, u in zip(self.content_words, self.content_latent):
            vectors[w] = self.text_maps["content"] @ u
        for w, u in self.word_latent.items():
            vectors[w] = self.text_maps[self.word_space[w]] @ u
        for w in vectors:
            vectors[w] = vectors[w] + spec.text_noise * rng.standard_normal(spec.text_dim)
        self.embeddings = EmbeddingTable(vectors, spec.text_dim)

        self.cue_maps = {
            (cue, space): _orthonormal(rng, self.registry[cue].declared_dim, L)
            for cue in self.cues
            for space in self.SPACES
        }
        self.mask = {}
        for cue in self.cues:
            m = np.zeros(L)
            lo, hi = spec.cue_latent.get(cue, (0, L))
            m[lo:hi] = 1.0
            self.mask[cue] = m

    def phrase_latent(self, label: str) -> np.ndarray:
        words = label.split()
        return np.sum([self.word_latent[w] for w in words], axis=0) / np.sqrt(len(words))

    def feature(self, rng, cue: str, latent: np.ndarray, space: str = "content") -> np.ndarray:
        spec = self.spec
        rho = spec.signal_correlation
        signal = spec.cue_signal.get(cue, 1.0) * rho
        z = latent * self.mask[cue] if space == "content" else latent
        dim = self.registry[cue].declared_dim
        noise = spec.noise_scale * np.sqrt(1.0 - rho * rho) * rng.standard_normal(dim)
        return _f32(signal * (self.cue_maps[(cue, space)] @ z) + noise)


def _disjoint_labels(rng, labels: list[str], n: int) -> list[str]:
    """n labels sharing no word with each other."""
    order = rng.permutation(len(labels))
    picked, used = [], set()
    for i in order:
        words = set(labels[i].split())
        if words & used:
            continue
        picked.append(labels[i])
        used |= words
        if len(picked) == n:
            break
    return picked


def _random_box(rng, image_w, image_h, lo, hi, conf_lo, conf_hi, index) -> BoundingBox:
    w = float(rng.integers(lo, hi + 1))
    h = float(rng.integers(lo, hi + 1))
    x = float(rng.integers(0, int(image_w - w) + 1))
    y = float(rng.integers(0, int(image_h - h) + 1))
    conf = float(np.round(rng.uniform(conf_lo, conf_hi), 4))
    return BoundingBox(x, y, w, h, conf, "", index)


class _Builder:
    IMAGE_W, IMAGE_H = 640.0, 480.0

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        self.world = _World(spec)
        self.rng = np.random.default_rng([spec.seed, 1])
        self.records: list[FeatureRecord] = []
        self.detections: dict[str, DetectionSet] = {}
        self.planted: dict[str, dict[str, Region]] = {}

    def add(self, image_id: str, region: Region, cue: str, vec: np.ndarray) -> None:
        self.records.append(FeatureRecord(image_id, region, self.world.registry[cue], vec))

    def content_answer(self, words: list[int]) -> tuple[str, np.ndarray]:
        w = self.world
        latent = w.content_latent[words].sum(axis=0) / np.sqrt(len(words))
        return " ".join(w.content_words[i] for i in words), latent

    def answer_sets(self, hard: bool) -> list[list[int]]:
        spec, rng = self.spec, self.rng
        k = spec.answer_words
        correct = [int(i) for i in rng.choice(spec.vocab_size, size=k, replace=False)]
        out = [correct]
        while len(out) < 4:
            if hard:
                cand = list(correct)
                pos = int(rng.integers(k))
                cand[pos] = int(rng.integers(spec.vocab_size))
            else:
                cand = [int(i) for i in rng.choice(spec.vocab_size, size=k, replace=False)]
            if len(set(cand)) == k and all(set(cand) != set(o) for o in out):
                out.append(cand)
        return out

    def question(self, qid: str, qtype: str, hard: bool) -> Question:
        spec, rng, w = self.spec, self.rng, self.world
        image_id = f"img_{qid}"
        sets = self.answer_sets(hard)
        texts, latents = zip(*(self.content_answer(s) for s in sets))
        z = latents[0]
        texts = list(texts)

        for cue in w.cues:
            self.add(image_id, WHOLE_IMAGE, cue, w.feature(rng, cue, z))
        focus = None
        if GROUPS[qtype] != "a":
            focus = _random_box(rng, self.IMAGE_W, self.IMAGE_H, 60, 300, 1.0, 1.0, None)
            focus = BoundingBox(focus.x, focus.y, focus.w, focus.h, 1.0, "focus")
            for cue in w.cues:
                self.add(image_id, GT_BOX, cue, w.feature(rng, cue, z))
        elif qtype in REGION_SELECTION_TYPES:
            person, obj = self.detections_for(image_id, z)
            others_p = [lab for lab in w.person_labels if not set(lab.split()) & set(person.split())]
            others_o = [lab for lab in w.object_labels if not set(lab.split()) & set(obj.split())]
            for i in range(4):
                p = person if i == 0 else others_p[int(rng.integers(len(others_p)))]
                o = obj if i == 0 else others_o[int(rng.integers(len(others_o)))]
                texts[i] = f"the {p} {texts[i]} with the {o}"

        order = rng.permutation(4)
        choices = tuple(texts[i] for i in order)
        correct = int(np.flatnonzero(order == 0)[0])
        return Question(
            id=qid,
            qtype=qtype,
            difficulty="hard" if hard else "easy",
            prompt=PROMPTS[qtype],
            choices=choices,
            correct=correct,
            focus_box=focus,
            image_id=image_id,
        )

    def detections_for(self, image_id: str, z: np.ndarray) -> tuple[str, str]:
        """Plant person/object boxes; returns the phrases the correct answer names."""
        rng, w = self.rng, self.world
        sel = SelectionSettings()
        n_person = int(rng.integers(1, 4))
        n_object = int(rng.integers(3, 7))
        p_labels = _disjoint_labels(rng, w.person_labels, n_person)
        o_labels = _disjoint_labels(rng, w.object_labels, n_object)
        p_star = int(rng.integers(len(p_labels)))
        o_star = int(rng.integers(len(o_labels)))
        ds = DetectionSet(image_id, self.IMAGE_W, self.IMAGE_H)
        index = 0
        person_feats = []
        for j, lab in enumerate(p_labels):
            box = _random_box(rng, self.IMAGE_W, self.IMAGE_H, 60, 240, 0.85, 1.0, index)
            box = BoundingBox(box.x, box.y, box.w, box.h, box.confidence, "person", index)
            ds.persons.append(box)
            content = z if j == p_star else rng.standard_normal(z.shape[0])
            feats = {}
            for cue in w.cues:
                if cue == sel.person_cue:
                    feats[cue] = w.feature(rng, cue, w.phrase_latent(lab), PERSON)
                else:
                    feats[cue] = w.feature(rng, cue, content)
                self.add(image_id, box.region, cue, feats[cue])
            person_feats.append(feats)
            index += 1
        # a detection the size filter must discard
        tiny = _random_box(rng, self.IMAGE_W, self.IMAGE_H, 20, 40, 0.9, 1.0, index)
        ds.persons.append(BoundingBox(tiny.x, tiny.y, tiny.w, tiny.h, tiny.confidence, "person", index))
        index += 1
        for cue in w.cues:
            pooled = np.mean([f[cue] for f in person_feats], axis=0)
            self.add(image_id, UNION_BOX, cue, _f32(pooled))
        for j, lab in enumerate(o_labels):
            box = _random_box(rng, self.IMAGE_W, self.IMAGE_H, 20, 160, 0.3, 1.0, index)
            ds.objects.append(BoundingBox(box.x, box.y, box.w, box.h, box.confidence, lab.replace(" ", "_"), index))
            r = w.phrase_latent(lab)
            for cue in w.cues:
                self.add(image_id, Region.detection(index), cue, w.feature(rng, cue, r, OBJECT))
            index += 1
        self.detections[image_id] = ds
        self.planted[image_id] = {
            PERSON: Region.detection(p_star),
            OBJECT: Region.detection(n_person + 1 + o_star),
        }
        return p_labels[p_star], o_labels[o_star]

    def grounding_pairs(self) -> list[GroundingPair]:
        spec, rng, w = self.spec, self.rng, self.world
        sel = SelectionSettings()
        pairs = []
        for i in range(spec.n_grounding):
            image_id = f"grd_{i:05d}"
            if sel.person_cue in w.registry and sel.person_cue in w.cues:
                lab = w.person_labels[int(rng.integers(len(w.person_labels)))]
                self.add(image_id, Region.detection(0), sel.person_cue,
                         w.feature(rng, sel.person_cue, w.phrase_latent(lab), PERSON))
                pairs.append(GroundingPair(image_id, Region.detection(0), PERSON, lab))
            if sel.object_cue in w.cues:
                lab = w.object_labels[int(rng.integers(len(w.object_labels)))]
                self.add(image_id, Region.detection(1), sel.object_cue,
                         w.feature(rng, sel.object_cue, w.phrase_latent(lab), OBJECT))
                pairs.append(GroundingPair(image_id, Region.detection(1), OBJECT, lab))
        return pairs


def _is_hard(spec: SyntheticSpec, i: int) -> bool:
    if spec.distractor_mode == "mixed":
        return i % 2 == 1
    return spec.distractor_mode == "near_miss"


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Build stores, embeddings, questions and detections; deterministic in ``spec.seed``."""
    b = _Builder(spec)
    train, test = [], []
    for qtype in spec.question_types:
        for i in range(spec.n_train):
            train.append(b.question(f"{qtype}_tr{i:05d}", qtype, _is_hard(spec, i)))
    for qtype in spec.question_types:
        for i in range(spec.n_test):
            test.append(b.question(f"{qtype}_te{i:05d}", qtype, _is_hard(spec, i)))
    grounding = b.grounding_pairs()
    w = b.world
    return SyntheticDataset(
        spec=spec,
        registry={c: w.registry[c] for c in w.cues},
        store=FeatureStore(b.records),
        embeddings=w.embeddings,
        train=train,
        test=test,
        detections=b.detections,
        person_vocab=w.person_labels,
        object_vocab=w.object_labels,
        grounding=grounding,
        planted=b.planted,
    )


@dataclass
class SelectionTrial:
    phrase: str
    box_features: dict[Region, np.ndarray]
    planted: Region


def selection_trials(spec: SyntheticSpec, kind: str, n_trials: int = 200,
                     n_candidates: int = 4) -> list[SelectionTrial]:
    """Candidate sets where exactly one region was generated from the phrase's latent.

    Person trials append a union box whose features pool the individual boxes.
    Uses the same generative maps as :func:`generate_synthetic` for ``spec``.
    """
    w = _World(spec)
    rng = np.random.default_rng([spec.seed, 2, 0 if kind == PERSON else 1])
    sel = SelectionSettings()
    cue = sel.person_cue if kind == PERSON else sel.object_cue
    labels = w.person_labels if kind == PERSON else w.object_labels
    trials = []
    for _ in range(n_trials):
        picked = _disjoint_labels(rng, labels, n_candidates)
        star = int(rng.integers(len(picked)))
        feats = {
            Region.detection(j): w.feature(rng, cue, w.phrase_latent(lab), kind)
            for j, lab in enumerate(picked)
        }
        if kind == PERSON:
            feats[UNION_BOX] = _f32(np.mean(list(feats.values()), axis=0))
        trials.append(SelectionTrial(picked[star], feats, Region.detection(star)))
    return trials


def write_dataset(ds: SyntheticDataset, out_dir) -> tuple[dict[str, Path], dict[str, Path]]:
    """Write every artifact of ``ds`` under ``out_dir``; returns (paths, feature paths)."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    by_cue: dict[str, list[FeatureRecord]] = {}
    for rec in ds.store:
        by_cue.setdefault(rec.cue.name, []).append(rec)
    feature_paths = {}
    for cue, records in by_cue.items():
        feature_paths[cue] = out / "features" / f"{cue}.fvec"
        write_feature_file(feature_paths[cue], records)
    paths = {
        "embeddings": out / "embeddings.txt",
        "train_questions": out / "questions_train.jsonl",
        "questions": out / "questions_test.jsonl",
        "detections": out / "detections.txt",
        "person_vocab": out / "person_vocab.txt",
        "object_vocab": out / "object_vocab.txt",
        "grounding": out / "grounding.tsv",
        "models": out / "models",
    }
    save_embeddings(ds.embeddings, paths["embeddings"])
    save_questions(ds.train, paths["train_questions"])
    save_questions(ds.test, paths["questions"])
    write_detections(paths["detections"], ds.detections)
    paths["person_vocab"].write_text("\n".join(ds.person_vocab) + "\n", encoding="utf-8")
    paths["object_vocab"].write_text("\n".join(ds.object_vocab) + "\n", encoding="utf-8")
    save_grounding_pairs(ds.grounding, paths["grounding"])
    return paths, feature_paths
