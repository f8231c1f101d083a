"""Matching-based scorers: image2text and text2image.

image2text scores an image by propagating the logged queries of its visual
neighbors into text space; text2image represents a query by click-weighted
images drawn from similar logged queries and matches visually. Click counts
enter through log1p, which keeps click=1 evidence alive and is monotone in
the raw count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import BagOfWords, ClickLog, FeatureStore, RawQuery
from .errors import ConfigError
from .similarity import jaccard, knn_images, knn_queries, visual_sim_to_rows


@dataclass(frozen=True)
class NeighborModelConfig:
    k_i2t: int = 50
    k_t2i: int = 30
    k_prime: int = 100
    click_transform: str = "log1p"
    visual_sim: str = "inv_euclidean"

    def __post_init__(self):
        if min(self.k_i2t, self.k_t2i, self.k_prime) < 1:
            raise ConfigError("neighbor counts must be positive")
        if self.click_transform != "log1p":
            raise ConfigError(f"unsupported click transform {self.click_transform!r}")


def click_weight(click: int) -> float:
    return math.log1p(click)


@dataclass(frozen=True)
class QueryImageProfile:
    """A query rendered as a click-weighted candidate image list.

    candidates are sorted by score descending (ties by image id ascending),
    one entry per image with scores accumulated over neighbor queries,
    truncated to the k' cap. k_used is 1 when the exact-match shortcut fired.
    """

    query: BagOfWords
    raw: str
    candidates: tuple[tuple[str, float], ...]
    k_used: int


def score_image2text(
    x: np.ndarray,
    q: BagOfWords,
    log: ClickLog,
    store: FeatureStore,
    cfg: NeighborModelConfig = NeighborModelConfig(),
) -> float:
    """Weighted sum of textual similarity over the image's k visual neighbors.

    Each neighbor contributes its average jaccard(q, logged query) weighted
    by log1p(click); neighbors absent from the log contribute 0.
    """
    neighbors = knn_images(x, store, cfg.k_i2t)
    if not neighbors.entries:
        return 0.0
    ids = neighbors.ids()
    vsims = visual_sim_to_rows(np.asarray(x, dtype=np.float64), store.rows(ids), cfg.visual_sim)
    total = 0.0
    for image_id, vsim in zip(ids, vsims):
        triads = log.by_image.get(image_id)
        if not triads:
            continue
        text_sim = sum(jaccard(q, t.query) * click_weight(t.click) for t in triads)
        total += float(vsim) * (text_sim / len(triads))
    return total / len(ids)


def build_profile(
    q: BagOfWords,
    raw: RawQuery | str,
    log: ClickLog,
    cfg: NeighborModelConfig = NeighborModelConfig(),
) -> QueryImageProfile:
    """Collect candidate images from neighbor queries, score them by
    log1p(click) * jaccard, accumulate per image, sort, cap at k'."""
    raw_text = raw.text if isinstance(raw, RawQuery) else raw
    key = q.key()
    if key in log.by_query:
        neighbor_keys = [(key, 1.0)]
        k_used = 1
    else:
        found = knn_queries(q, log, cfg.k_t2i)
        neighbor_keys = [(tuple(entry.split(" ")), s) for entry, s in found.entries]
        k_used = cfg.k_t2i
    scores: dict[str, float] = {}
    for nkey, qsim in neighbor_keys:
        for t in log.by_query[nkey]:
            scores[t.image_id] = scores.get(t.image_id, 0.0) + click_weight(t.click) * qsim
    ranked = sorted(scores.items(), key=lambda e: (-e[1], e[0]))[: cfg.k_prime]
    return QueryImageProfile(q, raw_text, tuple(ranked), k_used)


def score_text2image(
    x: np.ndarray,
    profile: QueryImageProfile,
    store: FeatureStore,
    cfg: NeighborModelConfig = NeighborModelConfig(),
) -> float:
    """Weighted sum of visual similarity between x and the profile images.

    Candidates without stored features are skipped; the averaging
    denominator counts only the candidates actually used.
    """
    used = [(i, s) for i, s in profile.candidates if i in store]
    if not used:
        return 0.0
    rows = store.rows([i for i, _ in used])
    vsims = visual_sim_to_rows(np.asarray(x, dtype=np.float64), rows, cfg.visual_sim)
    weights = np.array([s for _, s in used])
    return float(np.dot(vsims, weights) / len(used))
