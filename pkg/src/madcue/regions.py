"""Detection filtering, phrase-driven box selection and the set-matching kernel."""

from __future__ import annotations

import logging
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .cca import CcaModel, similarity
from .features import UNION_BOX, Region
from .text import PhraseChunk

log = logging.getLogger(__name__)

PERSON_CONF_THRESHOLD = 0.8
PERSON_MIN_SIDE = 50.0
MAX_OBJECT_CANDIDATES = 200
KERNEL_POWER = 5


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0
    class_label: str = ""
    index: int | None = None  # position in the image's detection list; None for synthesized boxes

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DetectionError(f"box must have positive size, got {self.w}x{self.h}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DetectionError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.x <= other.x and self.y <= other.y and self.x2 >= other.x2 and self.y2 >= other.y2
        )

    @property
    def region(self) -> Region:
        return UNION_BOX if self.index is None else Region.detection(self.index)


@dataclass
class DetectionSet:
    image_id: str
    image_w: float | None = None
    image_h: float | None = None
    persons: list[BoundingBox] = field(default_factory=list)
    objects: list[BoundingBox] = field(default_factory=list)


@dataclass(frozen=True)
class SelectionResult:
    chosen: Region
    score: float
    phrase: PhraseChunk | None = None


def _span(lo: float, hi: float) -> float:
    """Smallest width w with ``lo + w >= hi`` in floating point."""
    w = hi - lo
    while lo + w < hi:
        w = math.nextafter(w, math.inf)
    return w


def union_box(boxes: Sequence[BoundingBox]) -> BoundingBox:
    """Smallest axis-aligned box containing every input; confidence is the max."""
    if not boxes:
        raise DetectionError("union of no boxes")
    x1 = min(b.x for b in boxes)
    y1 = min(b.y for b in boxes)
    x2 = max(b.x2 for b in boxes)
    y2 = max(b.y2 for b in boxes)
    return BoundingBox(
        x1, y1, _span(x1, x2), _span(y1, y2),
        confidence=max(b.confidence for b in boxes),
        class_label="union",
        index=None,
    )


def filter_person_boxes(
    dets: Sequence[BoundingBox],
    conf_threshold: float = PERSON_CONF_THRESHOLD,
    min_side: float = PERSON_MIN_SIDE,
) -> list[BoundingBox]:
    """Keep confident, large-enough boxes and append their union box (last)."""
    kept = [b for b in dets if b.confidence >= conf_threshold and b.w >= min_side and b.h >= min_side]
    if kept:
        kept.append(union_box(kept))
    return kept


def object_candidates(
    dets: Sequence[BoundingBox], max_candidates: int = MAX_OBJECT_CANDIDATES
) -> list[BoundingBox]:
    """Highest-confidence detections first (stable), truncated."""
    ranked = sorted(dets, key=lambda b: -b.confidence)
    return ranked[:max_candidates]


def _argmax_selection(
    model: CcaModel,
    box_features: Mapping[Region, np.ndarray],
    phrase_vec,
    phrase: PhraseChunk | None,
) -> SelectionResult:
    if not box_features:
        raise DetectionError("no candidate regions to select from")
    best = None
    for region in sorted(box_features, key=Region.sort_key):
        score = similarity(model, box_features[region], phrase_vec)
        if best is None or score > best.score:
            best = SelectionResult(region, score, phrase)
    return best


def select_person_box(
    person_model: CcaModel,
    box_features: Mapping[Region, np.ndarray],
    phrase_vec,
    phrase: PhraseChunk | None = None,
) -> SelectionResult:
    """Region whose attribute vector is most similar to the phrase.

    Ties go to the lowest detection index; the union box ranks after detections.
    """
    return _argmax_selection(person_model, box_features, phrase_vec, phrase)


def select_object_box(
    object_model: CcaModel,
    box_features: Mapping[Region, np.ndarray],
    phrase_vec,
    max_candidates: int = MAX_OBJECT_CANDIDATES,
    phrase: PhraseChunk | None = None,
) -> SelectionResult:
    """Like :func:`select_person_box`, scoring only the first ``max_candidates`` entries.

    ``box_features`` must iterate in descending detection confidence.
    """
    retained = dict(list(box_features.items())[:max_candidates])
    return _argmax_selection(object_model, retained, phrase_vec, phrase)


def kernel_score(cosines, p: float = KERNEL_POWER) -> float:
    """Mean of ``cosine ** p`` over all box/phrase pairs."""
    c = np.asarray(cosines, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    if c.ndim != 2 or c.size == 0:
        raise ValueError(f"kernel_score needs a non-empty N x M matrix, got shape {c.shape}")
    p = float(p)
    if not p.is_integer() and np.any(c < 0):
        raise ValueError(f"non-integer power {p} is undefined for negative cosines")
    # exact mean: independent of entry order, and c ** p exactly when all entries equal c
    return float(statistics.mean([v ** p for v in c.ravel().tolist()]))


def clip_box(box: BoundingBox, image_w: float | None, image_h: float | None) -> BoundingBox | None:
    """Clip to the image; None if nothing with positive area remains."""
    x1, y1 = max(box.x, 0.0), max(box.y, 0.0)
    x2 = box.x2 if image_w is None else min(box.x2, image_w)
    y2 = box.y2 if image_h is None else min(box.y2, image_h)
    if x2 <= x1 or y2 <= y1:
        return None
    return replace(box, x=x1, y=y1, w=x2 - x1, h=y2 - y1)


def load_detections(path) -> dict[str, DetectionSet]:
    """Parse ``image_id kind class_label confidence x y w h`` lines.

    ``kind`` is ``person`` or ``object``; a line of kind ``image`` carries the
    image size in its ``w h`` fields. Detection indices count person and object
    lines of an image together, in file order.
    """
    raw: dict[str, list] = defaultdict(list)
    sizes: dict[str, tuple[float, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) != 8:
                raise DetectionError(f"{path}:{lineno}: expected 8 fields, got {len(fields)}")
            image_id, kind, label = fields[:3]
            try:
                conf, x, y, w, h = (float(v) for v in fields[3:])
            except ValueError as exc:
                raise DetectionError(f"{path}:{lineno}: {exc}") from None
            if kind == "image":
                sizes[image_id] = (w, h)
            elif kind in ("person", "object"):
                raw[image_id].append((lineno, kind, label, conf, x, y, w, h))
            else:
                raise DetectionError(f"{path}:{lineno}: unknown kind {kind!r}")

    out: dict[str, DetectionSet] = {}
    dropped = 0
    for image_id in dict.fromkeys([*sizes, *raw]):
        iw, ih = sizes.get(image_id, (None, None))
        ds = DetectionSet(image_id, iw, ih)
        for index, (lineno, kind, label, conf, x, y, w, h) in enumerate(raw.get(image_id, [])):
            if w <= 0 or h <= 0:
                dropped += 1
                continue
            try:
                box = BoundingBox(x, y, w, h, conf, label, index)
            except DetectionError as exc:
                raise DetectionError(f"{path}:{lineno}: {exc}") from None
            box = clip_box(box, iw, ih)
            if box is None:
                dropped += 1
                continue
            (ds.persons if kind == "person" else ds.objects).append(box)
        out[image_id] = ds
    if dropped:
        log.warning("%s: dropped %d degenerate boxes after clipping", path, dropped)
    return out


def write_detections(path, detections: Mapping[str, DetectionSet]) -> None:
    """Write detections so that re-loading reproduces their indices."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, ds in detections.items():
            if ds.image_w is not None and ds.image_h is not None:
                fh.write(f"{image_id} image - 1.0 0 0 {ds.image_w!r} {ds.image_h!r}\n")
            boxes = [("person", b) for b in ds.persons] + [("object", b) for b in ds.objects]
            boxes.sort(key=lambda kb: kb[1].index)
            for expected, (kind, b) in enumerate(boxes):
                if b.index != expected:
                    raise DetectionError(
                        f"{image_id}: detection indices must be 0..n-1 in order, found {b.index}"
                    )
                fh.write(
                    f"{image_id} {kind} {b.class_label or '-'} {b.confidence!r} "
                    f"{b.x!r} {b.y!r} {b.w!r} {b.h!r}\n"
                )
