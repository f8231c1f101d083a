"""Planted-relevance synthetic corpus generator.

Latent concepts are Gaussian feature clusters. Every query references 1-3
concepts (the first is its primary one) plus a few non-visual filler words;
clicked images are drawn from the referenced clusters with click counts that
grow with the query's planted visualness, and judgments grade pool images
Excellent / Good / Bad by concept-overlap tier. Everything derives from one
seed through named substreams, so regeneration is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    EmbeddingTable,
    FeatureStore,
    JudgmentSet,
    Normalizer,
    preprocess,
)
from .embedding_models import LabelPrediction
from .errors import ConfigError

_CONSONANTS = "bcdfgklmnprtvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthConfig:
    clusters: int = 10
    queries: int = 200
    images: int = 2000
    vocab_size: int = 150
    feature_dim: int = 16
    embedding_dim: int = 16
    seed: int = 42

    def validate(self) -> None:
        if min(self.clusters, self.queries, self.images, self.vocab_size) < 1:
            raise ConfigError("all synth counts must be positive")
        if self.embedding_dim < self.clusters:
            raise ConfigError("embedding_dim must be >= clusters")
        if self.vocab_size < 2 * self.clusters + 10:
            raise ConfigError("vocab_size too small for concept plus filler words")


@dataclass
class SynthQuery:
    query_id: str
    text: str
    concepts: tuple[int, ...]  # first entry is the primary concept
    visualness: float


@dataclass
class SynthCorpus:
    cfg: SynthConfig
    concept_names: list[str]
    click_rows: list[tuple[str, str, int]]
    features: FeatureStore
    embeddings: EmbeddingTable
    judgments: JudgmentSet
    label_predictions: dict[str, LabelPrediction]
    queries: list[SynthQuery]
    image_cluster: dict[str, int]


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, 400 + stream])


def _make_words(rng: np.random.Generator, count: int, norm: Normalizer) -> list[str]:
    """Pseudo-words that are fixed points of the default normalizer."""
    words: list[str] = []
    seen = set()
    while len(words) < count:
        syllables = 2 + int(rng.integers(0, 2))
        word = "".join(
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            + _VOWELS[int(rng.integers(len(_VOWELS)))]
            for _ in range(syllables)
        )
        if word in seen:
            continue
        try:
            bag = preprocess(word, norm)
        except Exception:
            continue
        if bag.tokens != (word,):
            continue
        seen.add(word)
        words.append(word)
    return words


def generate(cfg: SynthConfig) -> SynthCorpus:
    cfg.validate()
    norm = Normalizer()
    g = cfg.clusters

    word_rng = _rng(cfg.seed, 1)
    n_concept_words = sum(2 if c % 4 == 3 else 1 for c in range(g))
    pool = _make_words(word_rng, cfg.vocab_size, norm)
    concept_words: list[list[str]] = []
    cursor = 0
    for c in range(g):
        width = 2 if c % 4 == 3 else 1
        concept_words.append(pool[cursor : cursor + width])
        cursor += width
    filler_words = pool[cursor:]
    concept_names = [" ".join(ws) for ws in concept_words]

    img_rng = _rng(cfg.seed, 2)
    centers = img_rng.normal(0.0, 1.0, size=(g, cfg.feature_dim)) * 4.0
    image_ids = [f"im{i:05d}" for i in range(cfg.images)]
    clusters = img_rng.integers(0, g, size=cfg.images)
    matrix = centers[clusters] + img_rng.normal(0.0, 1.0, size=(cfg.images, cfg.feature_dim))
    features = FeatureStore(image_ids, matrix)
    image_cluster = {image_ids[i]: int(clusters[i]) for i in range(cfg.images)}
    by_cluster: dict[int, list[str]] = {c: [] for c in range(g)}
    for i, image_id in enumerate(image_ids):
        by_cluster[int(clusters[i])].append(image_id)

    query_rng = _rng(cfg.seed, 3)
    queries: list[SynthQuery] = []
    for i in range(cfg.queries):
        n_concepts = int(query_rng.choice([1, 2, 3], p=[0.5, 0.3, 0.2]))
        concepts = tuple(int(c) for c in query_rng.choice(g, size=n_concepts, replace=False))
        n_fillers = int(query_rng.integers(0, 4))
        fillers = [
            filler_words[int(query_rng.integers(len(filler_words)))] for _ in range(n_fillers)
        ]
        tokens = [w for c in concepts for w in concept_words[c]] + fillers
        concept_token_count = sum(len(concept_words[c]) for c in concepts)
        queries.append(
            SynthQuery(
                f"q{i:04d}",
                " ".join(tokens),
                concepts,
                concept_token_count / len(tokens),
            )
        )

    log_rng = _rng(cfg.seed, 4)
    click_rows: list[tuple[str, str, int]] = []
    clicked_for_query: dict[str, set[str]] = {q.query_id: set() for q in queries}

    def emit_clicks(text: str, concepts: tuple[int, ...], vis: float, owner: SynthQuery | None):
        scale = 4.0 + 46.0 * vis * vis
        primary, secondaries = concepts[0], concepts[1:]
        picks: list[tuple[str, float]] = []
        n_primary = int(log_rng.integers(4, 9))
        prim_pool = by_cluster[primary]
        for idx in log_rng.choice(len(prim_pool), size=min(n_primary, len(prim_pool)), replace=False):
            picks.append((prim_pool[int(idx)], 2.0))
        for sec in secondaries:
            sec_pool = by_cluster[sec]
            n_sec = int(log_rng.integers(2, 5))
            for idx in log_rng.choice(len(sec_pool), size=min(n_sec, len(sec_pool)), replace=False):
                picks.append((sec_pool[int(idx)], 1.0))
        for image_id, tier in picks:
            click = max(1, round(scale * tier * float(log_rng.uniform(0.7, 1.3))))
            click_rows.append((text, image_id, click))
            if owner is not None:
                clicked_for_query[owner.query_id].add(image_id)

    for q in queries:
        if log_rng.random() < 0.6:
            emit_clicks(q.text, q.concepts, q.visualness, q)
        for _ in range(int(log_rng.integers(1, 3))):
            n_fillers = int(log_rng.integers(0, 4))
            fillers = [
                filler_words[int(log_rng.integers(len(filler_words)))] for _ in range(n_fillers)
            ]
            tokens = [w for c in q.concepts for w in concept_words[c]] + fillers
            concept_token_count = sum(len(concept_words[c]) for c in q.concepts)
            emit_clicks(" ".join(tokens), q.concepts, concept_token_count / len(tokens), None)

    judge_rng = _rng(cfg.seed, 5)
    entries: dict[tuple[str, str], int] = {}
    query_text: dict[str, str] = {}

    def sample_pool(candidates: list[str], count: int, exclude: set[str]) -> list[str]:
        usable = [c for c in candidates if c not in exclude]
        if not usable:
            return []
        count = min(count, len(usable))
        idx = judge_rng.choice(len(usable), size=count, replace=False)
        return [usable[int(i)] for i in idx]

    for q in queries:
        clicked = clicked_for_query[q.query_id]
        taken: set[str] = set(clicked)
        query_text[q.query_id] = q.text
        for image_id in sample_pool(by_cluster[q.concepts[0]], int(judge_rng.integers(5, 10)), taken):
            entries[(q.query_id, image_id)] = 3
            taken.add(image_id)
        if len(q.concepts) > 1:
            secondary_pool = [i for c in q.concepts[1:] for i in by_cluster[c]]
            for image_id in sample_pool(secondary_pool, int(judge_rng.integers(4, 8)), taken):
                entries[(q.query_id, image_id)] = 2
                taken.add(image_id)
        other_pool = [
            i for c in range(g) if c not in q.concepts for i in by_cluster[c]
        ]
        for image_id in sample_pool(other_pool, int(judge_rng.integers(16, 25)), taken):
            entries[(q.query_id, image_id)] = 0
            taken.add(image_id)
    judgments = JudgmentSet(entries, query_text)

    emb_rng = _rng(cfg.seed, 6)
    basis, _ = np.linalg.qr(emb_rng.normal(size=(cfg.embedding_dim, cfg.embedding_dim)))
    vectors: dict[str, np.ndarray] = {}
    for c, words in enumerate(concept_words):
        for w in words:
            vectors[w] = 3.0 * basis[:, c] + emb_rng.normal(0.0, 0.05, cfg.embedding_dim)
    for w in filler_words:
        vectors[w] = emb_rng.normal(0.0, 0.5, cfg.embedding_dim)
    embeddings = EmbeddingTable(vectors, cfg.embedding_dim)

    label_rng = _rng(cfg.seed, 7)
    label_predictions: dict[str, LabelPrediction] = {}
    for image_id in image_ids:
        own = image_cluster[image_id]
        others = [c for c in range(g) if c != own]
        picks = label_rng.choice(len(others), size=min(2, len(others)), replace=False)
        labels = [(concept_names[own], round(float(label_rng.uniform(0.5, 0.85)), 4))]
        labels += [
            (concept_names[others[int(i)]], round(float(label_rng.uniform(0.05, 0.2)), 4))
            for i in picks
        ]
        label_predictions[image_id] = LabelPrediction(image_id, tuple(labels))

    return SynthCorpus(
        cfg,
        concept_names,
        click_rows,
        features,
        embeddings,
        judgments,
        label_predictions,
        queries,
        image_cluster,
    )


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Write the corpus artifacts; returns {name: path}."""
    from .corpus import write_embeddings, write_features, write_judgments

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "click_log": out / "click_log.tsv",
        "features": out / "features.tsv",
        "embeddings": out / "embeddings.txt",
        "judgments": out / "judgments.tsv",
        "concepts": out / "concepts.txt",
        "label_predictions": out / "label_predictions.tsv",
    }
    with open(paths["click_log"], "w", encoding="utf-8", newline="\n") as fh:
        for text, image_id, click in corpus.click_rows:
            fh.write(f"{text}\t{image_id}\t{click}\n")
    write_features(corpus.features, paths["features"])
    write_embeddings(corpus.embeddings, paths["embeddings"])
    write_judgments(corpus.judgments, paths["judgments"])
    with open(paths["concepts"], "w", encoding="utf-8", newline="\n") as fh:
        for name in corpus.concept_names:
            fh.write(name + "\n")
    with open(paths["label_predictions"], "w", encoding="utf-8", newline="\n") as fh:
        for image_id in corpus.features.ids:
            pred = corpus.label_predictions[image_id]
            payload = ",".join(f"{label}:{p!r}" for label, p in pred.labels)
            fh.write(f"{image_id}\t{payload}\n")
    return paths
