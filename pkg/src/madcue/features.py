"""Precomputed visual features keyed by (image, region, cue).

Binary feature files::

    b"FVEC" | record_count u32 | dim u32
    per record: id_len u32 | image_id utf-8 | region tag u8 [| detection index u32] | dim x f32

Region tags: 0 whole image, 1 ground-truth box, 2 detection (index follows),
3 union of the filtered person detections.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

MAGIC = b"FVEC"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class CueKind:
    name: str
    declared_dim: int

    def __post_init__(self):
        if self.declared_dim <= 0:
            raise FeatureError(f"cue {self.name}: declared_dim must be > 0")


DEFAULT_DIMS = {
    "vgg_fc7": 4096,
    "places_fc7": 4096,
    "act_hico_fc7": 4096,
    "act_mpii_fc7": 4096,
    "attr_fc7": 4096,
    "color_fc7": 4096,
    "act_hico_labels": 600,
    "act_mpii_labels": 393,
    "attr_labels": 302,
    "color_labels": 11,
}


def cue_registry(overrides: Mapping[str, int] | None = None) -> dict[str, CueKind]:
    """Default cue kinds, with optional per-cue dimension overrides or additions."""
    dims = dict(DEFAULT_DIMS)
    dims.update(overrides or {})
    return {name: CueKind(name, int(dim)) for name, dim in dims.items()}


@dataclass(frozen=True, order=True)
class Region:
    """Where a feature was extracted. ``index`` is set only for detections."""

    tag: int
    index: int = -1

    WHOLE_IMAGE = 0
    GT_BOX = 1
    DETECTION = 2
    UNION = 3

    @classmethod
    def detection(cls, index: int) -> "Region":
        if index < 0:
            raise FeatureError(f"detection index must be >= 0, got {index}")
        return cls(cls.DETECTION, int(index))

    def sort_key(self) -> tuple[int, int]:
        # detections by index, then union box, then fallbacks
        order = {self.DETECTION: 0, self.UNION: 1, self.GT_BOX: 2, self.WHOLE_IMAGE: 3}
        return order[self.tag], self.index

    def __str__(self) -> str:
        if self.tag == self.DETECTION:
            return f"detection:{self.index}"
        return _TAG_NAMES[self.tag]

    @classmethod
    def parse(cls, text: str) -> "Region":
        text = text.strip()
        for tag, name in _TAG_NAMES.items():
            if text == name:
                return cls(tag)
        head, _, idx = text.partition(":")
        if head in ("detection", "det") and idx.isdigit():
            return cls.detection(int(idx))
        raise FeatureError(f"unknown region {text!r}")


_TAG_NAMES = {Region.WHOLE_IMAGE: "whole_image", Region.GT_BOX: "gt_box", Region.UNION: "union_box"}
WHOLE_IMAGE = Region(Region.WHOLE_IMAGE)
GT_BOX = Region(Region.GT_BOX)
UNION_BOX = Region(Region.UNION)


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    image_id: str
    region: Region
    cue: CueKind
    vector: np.ndarray

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64)
        if vec.shape != (self.cue.declared_dim,):
            raise FeatureError(
                f"{self.image_id}/{self.region}/{self.cue.name}: vector has shape {vec.shape}, "
                f"expected ({self.cue.declared_dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise FeatureError(f"{self.image_id}/{self.region}/{self.cue.name}: non-finite values")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def key(self) -> tuple[str, Region, str]:
        return self.image_id, self.region, self.cue.name


class FeatureStore:
    """Insertion-ordered index of feature records."""

    def __init__(self, records: Iterable[FeatureRecord] = ()):
        self._records: dict[tuple[str, Region, str], FeatureRecord] = {}
        for rec in records:
            self.add(rec)

    def add(self, record: FeatureRecord) -> None:
        if record.key in self._records:
            image_id, region, cue = record.key
            raise FeatureError(f"duplicate feature record {image_id}/{region}/{cue}")
        self._records[record.key] = record

    def extend(self, records: Iterable[FeatureRecord]) -> None:
        for rec in records:
            self.add(rec)

    def get(self, image_id: str, region: Region, cue: str) -> np.ndarray | None:
        rec = self._records.get((image_id, region, cue))
        return None if rec is None else rec.vector

    def record(self, image_id: str, region: Region, cue: str) -> FeatureRecord | None:
        return self._records.get((image_id, region, cue))

    def __contains__(self, key) -> bool:
        return key in self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[FeatureRecord]:
        return iter(self._records.values())

    def cues(self) -> list[str]:
        return list(dict.fromkeys(k[2] for k in self._records))


def _pack_region(region: Region) -> bytes:
    if region.tag == Region.DETECTION:
        return struct.pack("<BI", region.tag, region.index)
    return struct.pack("<B", region.tag)


def write_feature_file(path, records: Sequence[FeatureRecord]) -> None:
    if not records:
        raise FeatureError("refusing to write an empty feature file")
    cue = records[0].cue
    chunks = [MAGIC, struct.pack("<II", len(records), cue.declared_dim)]
    for rec in records:
        if rec.cue != cue:
            raise FeatureError(f"mixed cues in one file: {cue.name} and {rec.cue.name}")
        name = rec.image_id.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(_pack_region(rec.region))
        chunks.append(rec.vector.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_feature_file(path, cue: CueKind) -> list[FeatureRecord]:
    """Read a binary feature file; errors on dimension mismatch, duplicates or truncation."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise FeatureError(f"{path}: not a feature file (bad magic or header)")
    count, dim = struct.unpack_from("<II", data, 4)
    if dim != cue.declared_dim:
        raise FeatureError(
            f"{path}: header dim {dim} does not match cue {cue.name} ({cue.declared_dim})"
        )
    pos = 12
    records = []
    seen = set()
    vec_bytes = 4 * dim

    def need(n):
        if pos + n > len(data):
            raise FeatureError(f"{path}: truncated at record {len(records)}")

    for _ in range(count):
        need(4)
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need(name_len + 1)
        image_id = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        tag = data[pos]
        pos += 1
        if tag == Region.DETECTION:
            need(4)
            (idx,) = struct.unpack_from("<I", data, pos)
            pos += 4
            region = Region.detection(idx)
        elif tag in _TAG_NAMES:
            region = Region(tag)
        else:
            raise FeatureError(f"{path}: unknown region tag {tag}")
        need(vec_bytes)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        pos += vec_bytes
        rec = FeatureRecord(image_id, region, cue, vec)
        if rec.key in seen:
            raise FeatureError(f"{path}: duplicate record {image_id}/{region}")
        seen.add(rec.key)
        records.append(rec)
    if pos != len(data):
        raise FeatureError(f"{path}: {len(data) - pos} trailing bytes after {count} records")
    return records


def load_feature_csv(path, cue: CueKind) -> list[FeatureRecord]:
    """Text import: ``image_id,region,v1,...,vD`` with region as in :meth:`Region.parse`."""
    records = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2 + cue.declared_dim:
                raise FeatureError(
                    f"{path}:{lineno}: {len(row) - 2} values, expected {cue.declared_dim}"
                )
            try:
                vec = np.array([float(v) for v in row[2:]])
            except ValueError as exc:
                raise FeatureError(f"{path}:{lineno}: {exc}") from None
            rec = FeatureRecord(row[0], Region.parse(row[1]), cue, vec)
            if rec.key in seen:
                raise FeatureError(f"{path}:{lineno}: duplicate record {row[0]}/{row[1]}")
            seen.add(rec.key)
            records.append(rec)
    return records


def load_features(path, cue: CueKind) -> list[FeatureRecord]:
    if str(path).endswith(".csv"):
        return load_feature_csv(path, cue)
    return load_feature_file(path, cue)


def stack_features(parts: Sequence[FeatureRecord]) -> np.ndarray:
    """Concatenate feature records of one image in the given order."""
    if not parts:
        raise FeatureError("nothing to stack")
    image_id = parts[0].image_id
    for p in parts:
        if p.image_id != image_id:
            raise FeatureError(f"cannot stack features of {image_id} and {p.image_id}")
    return np.concatenate([p.vector for p in parts])


def pool_regions(records: Sequence[FeatureRecord]) -> np.ndarray:
    """Elementwise mean over regions of one image and one cue."""
    if not records:
        raise FeatureError("nothing to pool")
    first = records[0]
    for r in records:
        if r.cue != first.cue:
            raise FeatureError(f"cannot pool cues {first.cue.name} and {r.cue.name}")
        if r.image_id != first.image_id:
            raise FeatureError(f"cannot pool images {first.image_id} and {r.image_id}")
    return np.mean([r.vector for r in records], axis=0)
