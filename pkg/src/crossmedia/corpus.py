"""Input artifacts: click logs, feature stores, embedding tables, judgments.

All stores are plain in-memory structures, immutable by convention after
construction, so they can be shared freely across worker threads. File
formats are flat and line-oriented:

* click log   -- TSV ``query<TAB>image_id<TAB>click``
* features    -- header ``<count> <dim>`` then ``image_id v1 ... v_dim``
  (an optional binary variant keeps the text header and stores per record a
  length-prefixed id followed by little-endian float32 components)
* embeddings  -- word2vec text layout, header ``<vocab> <dim>``
* judgments   -- TSV ``query_id<TAB>query_text<TAB>image_id<TAB>grade``
"""

from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ._stopwords import DOMAIN_STOPWORDS, ENGLISH_STOPWORDS
from .errors import (
    DimensionMismatch,
    EmptyAfterPreprocessing,
    EmptyQuery,
    MalformedLine,
)

VALID_GRADES = (0, 2, 3)

_NON_WORD = re.compile(r"[\W_]+", re.UNICODE)

# Ordered suffix rewrites: (suffix, replacement, min token length, blocked endings).
# Designed to be idempotent: no rule output ever ends in a suffix that any rule
# would strip again.
_SUFFIX_RULES = (
    ("ies", "y", 5, ()),
    ("sses", "ss", 5, ()),
    ("shes", "sh", 5, ()),
    ("ches", "ch", 5, ()),
    ("xes", "x", 4, ()),
    ("s", "", 4, ("ss", "us", "is")),
)

_IRREGULAR_PLURALS = (
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("wives", "wife"),
    ("knives", "knife"),
    ("leaves", "leaf"),
)


@dataclass(frozen=True)
class RawQuery:
    """Query text exactly as logged."""

    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyQuery("query text is empty")


@dataclass(frozen=True)
class BagOfWords:
    """Normalized query: ordered tokens plus a deduplicated set view."""

    tokens: tuple[str, ...]

    @cached_property
    def word_set(self) -> frozenset[str]:
        return frozenset(self.tokens)

    def key(self) -> tuple[str, ...]:
        """Order-insensitive identity: the sorted token multiset."""
        return tuple(sorted(self.tokens))

    def text(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Normalizer:
    """Deterministic query normalization: stopword removal plus a small
    suffix-rule lemmatizer. Normalization is idempotent."""

    stopwords: frozenset[str] = ENGLISH_STOPWORDS
    domain_stopwords: frozenset[str] = DOMAIN_STOPWORDS
    lemma_rules: tuple[tuple[str, str, int, tuple[str, ...]], ...] = _SUFFIX_RULES
    irregular: tuple[tuple[str, str], ...] = _IRREGULAR_PLURALS
    use_lemma: bool = True

    def __post_init__(self):
        self._irregular_map = dict(self.irregular)

    def is_stopword(self, token: str) -> bool:
        return token in self.stopwords or token in self.domain_stopwords

    def lemmatize(self, token: str) -> str:
        if not self.use_lemma:
            return token
        hit = self._irregular_map.get(token)
        if hit is not None:
            return hit
        for suffix, repl, min_len, blocked in self.lemma_rules:
            if len(token) >= min_len and token.endswith(suffix):
                if any(token.endswith(b) for b in blocked):
                    continue
                return token[: len(token) - len(suffix)] + repl
        return token


def preprocess(raw: RawQuery | str, norm: Normalizer) -> BagOfWords:
    """Lowercase, strip punctuation, drop stopwords, lemmatize.

    Token order is preserved. Raises EmptyAfterPreprocessing when nothing
    survives; callers decide whether that is fatal.
    """
    text = raw.text if isinstance(raw, RawQuery) else raw
    tokens = []
    for word in _NON_WORD.sub(" ", text.lower()).split():
        if norm.is_stopword(word):
            continue
        word = norm.lemmatize(word)
        if norm.is_stopword(word):
            continue
        tokens.append(word)
    if not tokens:
        raise EmptyAfterPreprocessing(f"query {text!r} normalized to nothing")
    return BagOfWords(tuple(tokens))


def read_word_list(path: str | Path) -> frozenset[str]:
    """One word per line, '#' comments and blank lines ignored."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                words.add(line.lower())
    return frozenset(words)


@dataclass
class ParseStats:
    lines: int = 0
    dropped_empty_query: int = 0
    merged_duplicates: int = 0
    replaced_duplicates: int = 0
    skipped_malformed: int = 0


@dataclass(frozen=True)
class Triad:
    """One click-through record: (normalized query, image, accumulated clicks)."""

    query: BagOfWords
    raw: str
    image_id: str
    click: int


class ClickLog:
    """Triad store with query-side and image-side indexes.

    ``by_query`` keys are order-insensitive token multisets, so "woman
    bicycle" and "bicycle woman" land under one key. Duplicate
    (query, image) pairs are merged by summing clicks.
    """

    def __init__(self, triads: list[Triad], stats: ParseStats | None = None):
        self.triads = triads
        self.stats = stats or ParseStats()
        self.by_query: dict[tuple[str, ...], list[Triad]] = {}
        self.by_image: dict[str, list[Triad]] = {}
        self.query_bags: dict[tuple[str, ...], BagOfWords] = {}
        for t in triads:
            key = t.query.key()
            self.by_query.setdefault(key, []).append(t)
            self.by_image.setdefault(t.image_id, []).append(t)
            self.query_bags.setdefault(key, t.query)

    def __len__(self) -> int:
        return len(self.triads)

    def image_ids(self) -> list[str]:
        return sorted(self.by_image)

    def clicked_images(self, key: tuple[str, ...]) -> set[str]:
        return {t.image_id for t in self.by_query.get(key, ())}

    def query_clicks(self, key: tuple[str, ...]) -> int:
        """Accumulated click count of one distinct query."""
        return sum(t.click for t in self.by_query.get(key, ()))


def _text_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            yield from fh
    elif isinstance(source, (io.RawIOBase, io.BufferedIOBase)):
        yield from io.TextIOWrapper(source, encoding="utf-8")
    else:
        yield from source


def parse_click_log(source, norm: Normalizer, strict: bool = False) -> ClickLog:
    """Parse TSV triads, preprocess queries, merge duplicates, build indexes.

    Lines whose query normalizes to nothing are dropped and counted. In
    strict mode any malformed line raises; otherwise it is skipped and
    counted.
    """
    stats = ParseStats()
    merged: dict[tuple[tuple[str, ...], str], list] = {}
    for line_no, line in enumerate(_text_lines(source), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        stats.lines += 1
        parts = line.split("\t")
        try:
            if len(parts) != 3:
                raise MalformedLine(line_no, f"expected 3 fields, got {len(parts)}")
            raw_text, image_id, click_text = parts
            try:
                click = int(click_text)
            except ValueError:
                raise MalformedLine(line_no, f"bad click count {click_text!r}") from None
            if click < 1:
                raise MalformedLine(line_no, f"click must be >= 1, got {click}")
            if not image_id:
                raise MalformedLine(line_no, "empty image id")
            if not raw_text.strip():
                raise MalformedLine(line_no, "empty query")
        except MalformedLine:
            if strict:
                raise
            stats.skipped_malformed += 1
            continue
        try:
            bag = preprocess(raw_text, norm)
        except EmptyAfterPreprocessing:
            stats.dropped_empty_query += 1
            continue
        slot = merged.get((bag.key(), image_id))
        if slot is None:
            merged[(bag.key(), image_id)] = [bag, raw_text, click]
        else:
            slot[2] += click
            stats.merged_duplicates += 1
    triads = [
        Triad(bag, raw, image_id, click)
        for (_, image_id), (bag, raw, click) in merged.items()
    ]
    return ClickLog(triads, stats)


def write_click_log(log: ClickLog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in log.triads:
            raw = re.sub(r"[\t\r\n]+", " ", t.raw)
            fh.write(f"{raw}\t{t.image_id}\t{t.click}\n")


class FeatureStore:
    """Dense visual feature vectors keyed by image id, uniform dimensionality."""

    def __init__(self, ids: list[str], matrix: np.ndarray, stats: ParseStats | None = None):
        self.ids = ids
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(ids):
            raise DimensionMismatch("feature matrix shape does not match id count")
        if not np.all(np.isfinite(self.matrix)):
            raise DimensionMismatch("feature vectors must be finite")
        self._row = {image_id: i for i, image_id in enumerate(ids)}
        self.stats = stats or ParseStats()

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._row

    def vector(self, image_id: str) -> np.ndarray:
        return self.matrix[self._row[image_id]]

    def rows(self, image_ids: Iterable[str]) -> np.ndarray:
        return self.matrix[[self._row[i] for i in image_ids]]

    @classmethod
    def from_mapping(cls, vectors: dict[str, np.ndarray]) -> "FeatureStore":
        ids = list(vectors)
        matrix = np.array([vectors[i] for i in ids], dtype=np.float64)
        return cls(ids, matrix)


def _parse_header(line: str, line_no: int = 1) -> tuple[int, int]:
    parts = line.split()
    if len(parts) != 2:
        raise MalformedLine(line_no, f"expected '<count> <dim>' header, got {line!r}")
    try:
        count, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise MalformedLine(line_no, f"non-integer header {line!r}") from None
    if count < 0 or dim < 1:
        raise MalformedLine(line_no, f"invalid header values {line!r}")
    return count, dim


def parse_features(source, binary: bool = False, strict: bool = False) -> FeatureStore:
    """Read a feature file. Duplicate ids: last wins, counted."""
    if binary:
        return _parse_features_binary(source)
    stats = ParseStats()
    lines = _text_lines(source)
    try:
        header = next(lines)
    except StopIteration:
        raise MalformedLine(1, "empty feature file") from None
    count, dim = _parse_header(header.strip())
    vectors: dict[str, np.ndarray] = {}
    rows_read = 0
    line_no = 1
    for line in lines:
        line_no += 1
        line = line.strip()
        if not line:
            continue
        rows_read += 1
        stats.lines += 1
        parts = line.split()
        try:
            if len(parts) != dim + 1:
                raise MalformedLine(line_no, f"expected {dim + 1} fields, got {len(parts)}")
            image_id = parts[0]
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise MalformedLine(line_no, "non-numeric feature component") from None
            if not np.all(np.isfinite(vec)):
                raise MalformedLine(line_no, "non-finite feature component")
        except MalformedLine:
            if strict:
                raise
            stats.skipped_malformed += 1
            continue
        if image_id in vectors:
            stats.replaced_duplicates += 1
        vectors[image_id] = vec
    if rows_read != count:
        raise MalformedLine(line_no, f"header declared {count} records, found {rows_read}")
    ids = list(vectors)
    matrix = (
        np.array([vectors[i] for i in ids], dtype=np.float64)
        if ids
        else np.zeros((0, dim))
    )
    return FeatureStore(ids, matrix, stats)


def _parse_features_binary(source) -> FeatureStore:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return _parse_features_binary(fh)
    data: io.BufferedIOBase = source
    header = data.readline().decode("utf-8")
    count, dim = _parse_header(header.strip())
    stats = ParseStats()
    vectors: dict[str, np.ndarray] = {}
    for record in range(count):
        raw_len = data.read(2)
        if len(raw_len) != 2:
            raise MalformedLine(record + 2, "truncated record length")
        (id_len,) = struct.unpack("<H", raw_len)
        id_bytes = data.read(id_len)
        payload = data.read(4 * dim)
        if len(id_bytes) != id_len or len(payload) != 4 * dim:
            raise MalformedLine(record + 2, "truncated record")
        image_id = id_bytes.decode("utf-8")
        vec = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(vec)):
            raise MalformedLine(record + 2, "non-finite feature component")
        if image_id in vectors:
            stats.replaced_duplicates += 1
        vectors[image_id] = vec
        stats.lines += 1
    if data.read(1):
        raise MalformedLine(count + 2, "trailing bytes after declared records")
    ids = list(vectors)
    matrix = (
        np.array([vectors[i] for i in ids], dtype=np.float64)
        if ids
        else np.zeros((0, dim))
    )
    return FeatureStore(ids, matrix, stats)


def write_features(store: FeatureStore, path: str | Path, binary: bool = False) -> None:
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"{len(store)} {store.dim}\n".encode("utf-8"))
            for image_id in store.ids:
                id_bytes = image_id.encode("utf-8")
                fh.write(struct.pack("<H", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(store.vector(image_id).astype("<f4").tobytes())
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(store)} {store.dim}\n")
        for image_id in store.ids:
            comps = " ".join(repr(v) for v in store.vector(image_id).tolist())
            fh.write(f"{image_id} {comps}\n")


class EmbeddingTable:
    """word -> dense vector map of uniform dimensionality."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int, stats: ParseStats | None = None):
        self.vectors = vectors
        self.dim = dim
        self.stats = stats or ParseStats()
        for word, vec in vectors.items():
            if vec.shape != (dim,):
                raise DimensionMismatch(f"embedding for {word!r} has length {vec.shape}")

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, word: str) -> np.ndarray | None:
        return self.vectors.get(word)


def parse_embeddings(source, strict: bool = False) -> EmbeddingTable:
    """word2vec text layout; duplicate words: last wins, counted."""
    stats = ParseStats()
    lines = _text_lines(source)
    try:
        header = next(lines)
    except StopIteration:
        raise MalformedLine(1, "empty embedding file") from None
    count, dim = _parse_header(header.strip())
    vectors: dict[str, np.ndarray] = {}
    rows_read = 0
    line_no = 1
    for line in lines:
        line_no += 1
        line = line.strip()
        if not line:
            continue
        rows_read += 1
        stats.lines += 1
        parts = line.split()
        try:
            if len(parts) != dim + 1:
                raise MalformedLine(line_no, f"expected {dim + 1} fields, got {len(parts)}")
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise MalformedLine(line_no, "non-numeric embedding component") from None
            if not np.all(np.isfinite(vec)):
                raise MalformedLine(line_no, "non-finite embedding component")
        except MalformedLine:
            if strict:
                raise
            stats.skipped_malformed += 1
            continue
        if parts[0] in vectors:
            stats.replaced_duplicates += 1
        vectors[parts[0]] = vec
    if rows_read != count:
        raise MalformedLine(line_no, f"header declared {count} rows, found {rows_read}")
    return EmbeddingTable(vectors, dim, stats)


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for word, vec in table.vectors.items():
            comps = " ".join(repr(v) for v in vec.tolist())
            fh.write(f"{word} {comps}\n")


class JudgmentSet:
    """Graded relevance labels {Excellent=3, Good=2, Bad=0} per (query, image)."""

    def __init__(
        self,
        entries: dict[tuple[str, str], int],
        query_text: dict[str, str],
        stats: ParseStats | None = None,
    ):
        for pair, grade in entries.items():
            if grade not in VALID_GRADES:
                raise MalformedLine(0, f"grade {grade} for {pair} not in {VALID_GRADES}")
        self.entries = entries
        self.query_text = query_text
        self.stats = stats or ParseStats()

    def __len__(self) -> int:
        return len(self.entries)

    def grade(self, query_id: str, image_id: str) -> int:
        """Unjudged pairs count as Bad (grade 0)."""
        return self.entries.get((query_id, image_id), 0)

    def is_judged(self, query_id: str, image_id: str) -> bool:
        return (query_id, image_id) in self.entries

    def queries(self) -> list[str]:
        return list(self.query_text)

    def pools(self) -> dict[str, list[str]]:
        """Per-query judged image lists, first-seen order, unique."""
        pools: dict[str, list[str]] = {}
        seen: set[tuple[str, str]] = set()
        for (qid, img) in self.entries:
            if (qid, img) not in seen:
                pools.setdefault(qid, []).append(img)
                seen.add((qid, img))
        return pools


def parse_judgments(source, strict: bool = False) -> JudgmentSet:
    stats = ParseStats()
    entries: dict[tuple[str, str], int] = {}
    query_text: dict[str, str] = {}
    for line_no, line in enumerate(_text_lines(source), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        stats.lines += 1
        parts = line.split("\t")
        try:
            if len(parts) != 4:
                raise MalformedLine(line_no, f"expected 4 fields, got {len(parts)}")
            qid, text, image_id, grade_text = parts
            try:
                grade = int(grade_text)
            except ValueError:
                raise MalformedLine(line_no, f"bad grade {grade_text!r}") from None
            if grade not in VALID_GRADES:
                raise MalformedLine(line_no, f"grade {grade} not in {VALID_GRADES}")
            if not qid or not image_id:
                raise MalformedLine(line_no, "empty query id or image id")
        except MalformedLine:
            if strict:
                raise
            stats.skipped_malformed += 1
            continue
        if (qid, image_id) in entries:
            stats.replaced_duplicates += 1
        entries[(qid, image_id)] = grade
        query_text[qid] = text
    return JudgmentSet(entries, query_text, stats)


def write_judgments(judg: JudgmentSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (qid, image_id), grade in judg.entries.items():
            fh.write(f"{qid}\t{judg.query_text[qid]}\t{image_id}\t{grade}\n")


def read_query_pairs(source) -> list[tuple[str, str, str]]:
    """Scoring manifest rows: (query_id, query_text, image_id).

    Accepts either the 4-column judgment layout (grade ignored) or a bare
    3-column layout.
    """
    rows = []
    for line_no, line in enumerate(_text_lines(source), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) == 4:
            qid, text, image_id, _ = parts
        elif len(parts) == 3:
            qid, text, image_id = parts
        else:
            raise MalformedLine(line_no, f"expected 3 or 4 fields, got {len(parts)}")
        rows.append((qid, text, image_id))
    return rows
