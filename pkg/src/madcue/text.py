"""Word-embedding lookup, answer averaging and vocabulary phrase chunking."""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PERSON = "person"
OBJECT = "object"


class EmbeddingFormatError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and strip surrounding punctuation."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            tokens.append(tok)
    return tokens


class EmbeddingTable:
    """Immutable token -> vector map."""

    def __init__(self, entries: dict[str, np.ndarray], dimension: int, duplicates: int = 0):
        if not entries:
            raise EmbeddingFormatError("no entries")
        self.dimension = dimension
        self.duplicates = duplicates
        self._entries = {}
        for tok, vec in entries.items():
            if not tok or tok != tok.lower() or any(c.isspace() for c in tok):
                raise EmbeddingFormatError(f"invalid token {tok!r}")
            arr = np.array(vec, dtype=np.float64)
            if arr.shape != (dimension,):
                raise EmbeddingFormatError(
                    f"token {tok!r} has {arr.size} values, expected {dimension}"
                )
            arr.setflags(write=False)
            self._entries[tok] = arr

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, token: str) -> bool:
        return token in self._entries

    def __iter__(self):
        return iter(self._entries)

    def lookup(self, token: str) -> np.ndarray | None:
        return self._entries.get(token)

    def max_norm(self) -> float:
        return max(float(np.linalg.norm(v)) for v in self._entries.values())


def load_embeddings(path) -> EmbeddingTable:
    """Read ``token v1 ... vD`` lines. A leading word2vec ``count dim`` header is skipped."""
    entries: dict[str, np.ndarray] = {}
    dimension = None
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if lineno == 1 and len(fields) == 2 and all(f.isdigit() for f in fields):
                continue
            if len(fields) < 2:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected a token and values")
            token, values = fields[0], fields[1:]
            if dimension is None:
                dimension = len(values)
            elif len(values) != dimension:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: {len(values)} values, expected {dimension}"
                )
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value")
            token = token.lower()
            if token in entries:
                duplicates += 1
                continue
            entries[token] = vec
    if not entries:
        raise EmbeddingFormatError(f"{path}: no entries")
    if duplicates:
        log.warning("%s: %d duplicate tokens ignored (first occurrence kept)", path, duplicates)
    return EmbeddingTable(entries, dimension, duplicates)


def save_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in table:
            fh.write(tok + " " + " ".join(repr(float(v)) for v in table.lookup(tok)) + "\n")


def embed_text(table: EmbeddingTable, tokens: Sequence[str]) -> tuple[np.ndarray, float]:
    """Mean vector of the known tokens and the fraction of tokens that were known."""
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty token sequence")
    known = [v for v in (table.lookup(t) for t in tokens) if v is not None]
    if not known:
        return np.zeros(table.dimension), 0.0
    return np.mean(known, axis=0), len(known) / len(tokens)


@dataclass(frozen=True)
class PhraseChunk:
    kind: str
    tokens: tuple[str, ...]
    span: tuple[int, int]
    matched_label: str

    def __post_init__(self):
        if self.kind not in (PERSON, OBJECT):
            raise ValueError(f"unknown chunk kind {self.kind!r}")
        start, end = self.span
        if not 0 <= start < end or len(self.tokens) != end - start:
            raise ValueError(f"bad span {self.span} for tokens {self.tokens}")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def load_vocabulary(path) -> list[str]:
    """One label per line; blank lines and ``#`` comments are ignored."""
    labels = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            labels.append(line)
    if not labels:
        raise ValueError(f"{path}: empty vocabulary")
    return labels


def _label_index(labels: Iterable[str]) -> dict[tuple[str, ...], str]:
    index = {}
    for label in labels:
        toks = tuple(tokenize(label))
        if toks and toks not in index:
            index[toks] = label
    return index


def extract_chunks(
    answer_tokens: Sequence[str],
    person_vocab: Sequence[str],
    object_vocab: Sequence[str],
) -> list[PhraseChunk]:
    """Greedy left-to-right longest match; person labels win ties in length."""
    if not person_vocab or not object_vocab:
        raise ValueError("person and object vocabularies must be non-empty")
    person = _label_index(person_vocab)
    obj = _label_index(object_vocab)
    longest = max(len(k) for k in (*person, *obj))
    tokens = tuple(answer_tokens)
    chunks = []
    i = 0
    while i < len(tokens):
        found = None
        for length in range(min(longest, len(tokens) - i), 0, -1):
            window = tokens[i : i + length]
            if window in person:
                found = PhraseChunk(PERSON, window, (i, i + length), person[window])
            elif window in obj:
                found = PhraseChunk(OBJECT, window, (i, i + length), obj[window])
            if found:
                break
        if found:
            chunks.append(found)
            i = found.span[1]
        else:
            i += 1
    return chunks
