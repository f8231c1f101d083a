"""Text and visual similarity primitives plus exact brute-force k-NN.

Visual similarity defaults to 1/(1 + euclidean distance): bounded in (0, 1],
strictly decreasing in distance, so ordering by similarity equals ordering by
distance. A cosine form is available behind a config switch. All tie-breaking
is score descending, then id/key ascending, so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BagOfWords, ClickLog, FeatureStore
from .errors import ConfigError, DimensionMismatch

VISUAL_SIM_KINDS = ("inv_euclidean", "cosine")


@dataclass(frozen=True)
class NeighborList:
    """Top-k neighbors, sorted by score descending, ties by id ascending."""

    entries: tuple[tuple[str, float], ...]
    k: int

    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def jaccard(a: BagOfWords, b: BagOfWords) -> float:
    """|a ∩ b| / |a ∪ b| over word sets; 0 when both are empty."""
    union = a.word_set | b.word_set
    if not union:
        return 0.0
    return len(a.word_set & b.word_set) / len(union)


def _check_dims(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionMismatch(f"vector lengths differ: {x.shape} vs {y.shape}")


def visual_sim(x: np.ndarray, y: np.ndarray) -> float:
    """1 / (1 + euclidean distance); equals 1 iff x == y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(x, y)
    return 1.0 / (1.0 + float(np.linalg.norm(x - y)))


def cosine_visual_sim(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.dot(x, y) / (nx * ny))


def visual_sim_fn(kind: str):
    if kind == "inv_euclidean":
        return visual_sim
    if kind == "cosine":
        return cosine_visual_sim
    raise ConfigError(f"unknown visual similarity {kind!r}; choose from {VISUAL_SIM_KINDS}")


def visual_sim_to_rows(x: np.ndarray, rows: np.ndarray, kind: str = "inv_euclidean") -> np.ndarray:
    """Vectorized similarity of one vector against a feature matrix."""
    x = np.asarray(x, dtype=np.float64)
    if rows.ndim != 2 or (rows.shape[0] and rows.shape[1] != x.shape[0]):
        raise DimensionMismatch(f"vector length {x.shape[0]} vs matrix {rows.shape}")
    if kind == "inv_euclidean":
        dists = np.linalg.norm(rows - x[None, :], axis=1)
        return 1.0 / (1.0 + dists)
    if kind == "cosine":
        norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(x)
        sims = rows @ x
        out = np.zeros(len(rows))
        nonzero = norms > 0
        out[nonzero] = sims[nonzero] / norms[nonzero]
        return out
    raise ConfigError(f"unknown visual similarity {kind!r}")


def knn_images(x: np.ndarray, store: FeatureStore, k: int) -> NeighborList:
    """Exact brute-force scan ordered by ascending euclidean distance.

    Scores are visual_sim values; the orderings coincide. Returns the whole
    store when it has fewer than k vectors.
    """
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    x = np.asarray(x, dtype=np.float64)
    if store.dim != x.shape[0]:
        raise DimensionMismatch(f"query dim {x.shape[0]} vs store dim {store.dim}")
    dists = np.linalg.norm(store.matrix - x[None, :], axis=1)
    order = sorted(range(len(store)), key=lambda i: (dists[i], store.ids[i]))[:k]
    entries = tuple((store.ids[i], 1.0 / (1.0 + float(dists[i]))) for i in order)
    return NeighborList(entries, k)


def knn_queries(q: BagOfWords, log: ClickLog, k: int) -> NeighborList:
    """Top-k distinct log queries by Jaccard similarity; zero scores excluded.

    Neighbor ids are the space-joined multiset keys of ``log.by_query``;
    split on spaces to index back into the log.
    """
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    scored = []
    for key, bag in log.query_bags.items():
        s = jaccard(q, bag)
        if s > 0.0:
            scored.append((key, s))
    scored.sort(key=lambda e: (-e[1], e[0]))
    entries = tuple((" ".join(key), s) for key, s in scored[:k])
    return NeighborList(entries, k)
