"""Query visualness: the fraction of a query's words covered by full matches
against a visual-concept vocabulary.

Individual words of a multi-word concept are not necessarily visual (the
"hot" of "hot dog"), so a query fragment only counts when it matches a whole
vocabulary phrase. The matcher picks the non-overlapping contiguous span
cover that maximizes covered tokens (dynamic program over span starts),
which keeps scores monotone under vocabulary expansion; among maximal
covers it deterministically prefers the earliest, longest spans.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import BagOfWords, ClickLog, Normalizer, _text_lines, preprocess
from .errors import ConfigError, EmptyAfterPreprocessing, EmptyQuery

VISUAL = "visual"
NONVISUAL = "nonvisual"


@dataclass
class ConceptVocabulary:
    """Normalized visual-concept phrases (single words or word sequences)."""

    phrases: set[tuple[str, ...]] = field(default_factory=set)

    @property
    def max_len(self) -> int:
        return max((len(p) for p in self.phrases), default=0)

    def __len__(self) -> int:
        return len(self.phrases)

    def __contains__(self, phrase: tuple[str, ...]) -> bool:
        return phrase in self.phrases

    def add(self, phrase_text: str, norm: Normalizer) -> bool:
        """Normalize with the query pipeline and add; False if nothing
        survives normalization."""
        try:
            bag = preprocess(phrase_text, norm)
        except EmptyAfterPreprocessing:
            return False
        self.phrases.add(bag.tokens)
        return True

    @classmethod
    def from_lines(cls, lines, norm: Normalizer) -> "ConceptVocabulary":
        vocab = cls()
        for line in lines:
            line = line.strip()
            if line and not line.startswith("#"):
                vocab.add(line, norm)
        return vocab

    @classmethod
    def from_file(cls, path: str | Path, norm: Normalizer) -> "ConceptVocabulary":
        return cls.from_lines(_text_lines(path), norm)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for phrase in sorted(self.phrases):
                fh.write(" ".join(phrase) + "\n")


@dataclass(frozen=True)
class VisualnessReport:
    score: float
    matched_spans: tuple[tuple[int, int, str], ...]  # (start, length, phrase)
    query_id: str | None = None


def visualness(q: BagOfWords, vocab: ConceptVocabulary, query_id: str | None = None) -> VisualnessReport:
    """Maximum-coverage span cover; score = covered tokens / all tokens."""
    if not q.tokens:
        raise EmptyQuery("cannot measure visualness of an empty query")
    n = len(q.tokens)
    longest = min(vocab.max_len, n)
    # best[i]: most tokens coverable in the suffix starting at i
    best = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        best[i] = best[i + 1]
        for length in range(1, longest + 1):
            if i + length > n:
                break
            if q.tokens[i : i + length] in vocab:
                best[i] = max(best[i], length + best[i + length])
    spans = []
    pos = 0
    while pos < n:
        taken = 0
        for length in range(min(longest, n - pos), 0, -1):
            if (
                q.tokens[pos : pos + length] in vocab
                and length + best[pos + length] == best[pos]
            ):
                spans.append((pos, length, " ".join(q.tokens[pos : pos + length])))
                taken = length
                break
        pos += taken if taken else 1
    return VisualnessReport(best[0] / n, tuple(spans), query_id)


def classify(q: BagOfWords, vocab: ConceptVocabulary, threshold: float) -> str:
    """Visual iff the score strictly exceeds the threshold."""
    if not 0 <= threshold <= 1:
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    return VISUAL if visualness(q, vocab).score > threshold else NONVISUAL


def visual_percentage_curve(
    log: ClickLog,
    vocab: ConceptVocabulary,
    thresholds,
    weighted: bool = False,
) -> list[tuple[float, float]]:
    """Fraction of distinct queries classified visual at each threshold.

    The weighted variant weights each distinct query by its accumulated
    click count, measuring how much of the click mass is visual-oriented.
    """
    if not log.query_bags:
        raise ConfigError("click log has no queries")
    entries = []
    for key, bag in log.query_bags.items():
        score = visualness(bag, vocab).score
        entries.append((score, log.query_clicks(key) if weighted else 1))
    total = sum(w for _, w in entries)
    curve = []
    for t in thresholds:
        hit = sum(w for score, w in entries if score > t)
        curve.append((float(t), hit / total))
    return curve


@dataclass(frozen=True)
class VisualnessBin:
    lo: float
    hi: float
    closed_right: bool
    query_ids: tuple[str, ...]


def group_by_visualness(
    queries: dict[str, BagOfWords],
    vocab: ConceptVocabulary,
    bin_edges,
) -> list[VisualnessBin]:
    """Assign each query to one half-open bin [lo, hi); the last bin is
    closed at 1.0. A score exactly on an edge lands in the bin starting
    there."""
    edges = [float(e) for e in bin_edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError("bin edges must be strictly ascending")
    if edges[0] != 0.0 or edges[-1] != 1.0:
        raise ConfigError("bin edges must cover [0, 1]")
    members: list[list[str]] = [[] for _ in range(len(edges) - 1)]
    for qid in sorted(queries):
        score = visualness(queries[qid], vocab).score
        idx = int(np.searchsorted(edges, score, side="right")) - 1
        idx = min(idx, len(members) - 1)
        members[idx].append(qid)
    return [
        VisualnessBin(edges[i], edges[i + 1], i == len(members) - 1, tuple(m))
        for i, m in enumerate(members)
    ]
