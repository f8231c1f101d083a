"""Semantic embedding scorers: PSI, DeViSE, ConSE.

PSI learns two linear maps into a common space with a triplet hinge loss;
DeViSE keeps the trainable image-side map but embeds queries by mean-pooled
word vectors from a fixed table; ConSE needs no training at all and embeds an
image as the probability-weighted convex combination of its predicted labels'
word vectors, scored against the query by cosine.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import BagOfWords, ClickLog, EmbeddingTable, FeatureStore, _text_lines
from .errors import (
    AllWordsOutOfVocabulary,
    ConfigError,
    DimensionMismatch,
    EmptyQueryEncoding,
    MalformedLine,
    NoResolvableLabel,
    ZeroVector,
)

VOCAB_CAP = 50_000

CHECKPOINT_MAGIC = "crossmedia-checkpoint 1"


@dataclass(frozen=True)
class TrainConfig:
    d_c: int = 200
    batch: int = 100
    lr0: float = 0.01
    decay: float = 0.95
    epochs: int = 20
    margin: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.d_c < 1 or self.batch < 1:
            raise ConfigError("d_c and batch must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not 0 < self.decay <= 1:
            raise ConfigError("decay must be in (0, 1]")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")


@dataclass(frozen=True)
class Triplet:
    q: BagOfWords
    x_pos: str
    x_neg: str

    def __post_init__(self):
        if self.x_pos == self.x_neg:
            raise ConfigError("triplet positive and negative must differ")


def hinge_loss(f_pos: float, f_neg: float, margin: float = 1.0) -> float:
    """max(0, margin - f_pos + f_neg)."""
    return max(0.0, margin - f_pos + f_neg)


def build_vocabulary(log: ClickLog, cap: int = VOCAB_CAP) -> tuple[str, ...]:
    """Up to `cap` most frequent words across the log's queries.

    Frequency counts token occurrences over all triads; ties break by word
    ascending, so rebuilding yields an identical vocabulary.
    """
    counts: Counter[str] = Counter()
    for t in log.triads:
        counts.update(t.query.tokens)
    ranked = sorted(counts.items(), key=lambda e: (-e[1], e[0]))
    return tuple(w for w, _ in ranked[:cap])


def sample_triplets(log: ClickLog, rng: np.random.Generator) -> list[Triplet]:
    """One triplet per clicked (query, image) pair; the negative is drawn
    uniformly from log images not clicked for that query.

    Pairs with no possible negative are skipped. Deterministic given rng
    state.
    """
    universe = log.image_ids()
    n = len(universe)
    clicked_cache: dict[tuple[str, ...], set[str]] = {}
    out = []
    for t in log.triads:
        key = t.query.key()
        clicked = clicked_cache.get(key)
        if clicked is None:
            clicked = log.clicked_images(key)
            clicked_cache[key] = clicked
        if len(clicked) >= n:
            continue
        while True:
            neg = universe[int(rng.integers(n))]
            if neg not in clicked:
                break
        out.append(Triplet(t.query, t.image_id, neg))
    return out


@dataclass
class PsiModel:
    """Paired linear projections with a binary bag-of-words query side."""

    W_i: np.ndarray  # (d_c, d_i)
    W_t: np.ndarray  # (d_c, d_t)
    vocab: tuple[str, ...]

    def __post_init__(self):
        self.W_i = np.asarray(self.W_i, dtype=np.float64)
        self.W_t = np.asarray(self.W_t, dtype=np.float64)
        if self.W_i.shape[0] != self.W_t.shape[0]:
            raise DimensionMismatch("W_i and W_t disagree on common-space size")
        if self.W_t.shape[1] != len(self.vocab):
            raise DimensionMismatch("W_t width does not match vocabulary size")
        if len(set(self.vocab)) != len(self.vocab):
            raise ConfigError("vocabulary contains duplicates")
        self._index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def d_c(self) -> int:
        return self.W_i.shape[0]

    @property
    def d_i(self) -> int:
        return self.W_i.shape[1]

    @property
    def d_t(self) -> int:
        return self.W_t.shape[1]

    def vocab_indices(self, q: BagOfWords) -> list[int]:
        idx = sorted(self._index[w] for w in q.word_set if w in self._index)
        if not idx:
            raise EmptyQueryEncoding(f"no word of {q.tokens} is in the model vocabulary")
        return idx

    def encode_query(self, q: BagOfWords) -> np.ndarray:
        vec = np.zeros(len(self.vocab))
        vec[self.vocab_indices(q)] = 1.0
        return vec

    def embed_query(self, q: BagOfWords) -> np.ndarray:
        return self.W_t[:, self.vocab_indices(q)].sum(axis=1)


def psi_score(model: PsiModel, x: np.ndarray, q: BagOfWords) -> float:
    """(W_i x) . (W_t q) with q as a binary bag-of-words vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d_i,):
        raise DimensionMismatch(f"feature length {x.shape} vs model d_i {model.d_i}")
    return float(np.dot(model.W_i @ x, model.embed_query(q)))


@dataclass
class DeviseModel:
    """Trainable image projection against a fixed word-embedding query side."""

    W_i: np.ndarray  # (d_c, d_i)
    table: EmbeddingTable

    def __post_init__(self):
        self.W_i = np.asarray(self.W_i, dtype=np.float64)
        if self.table.dim != self.W_i.shape[0]:
            raise DimensionMismatch(
                f"embedding dim {self.table.dim} vs common space {self.W_i.shape[0]}"
            )

    @property
    def d_c(self) -> int:
        return self.W_i.shape[0]

    @property
    def d_i(self) -> int:
        return self.W_i.shape[1]


def devise_embed_query(q: BagOfWords, table: EmbeddingTable) -> np.ndarray:
    """Mean of in-table word vectors, token multiplicity respected.

    Out-of-table words are skipped; the denominator counts pooled tokens
    only.
    """
    pooled = [table.get(w) for w in q.tokens if w in table]
    if not pooled:
        raise AllWordsOutOfVocabulary(f"no word of {q.tokens} has an embedding")
    return np.mean(pooled, axis=0)


def devise_score(model: DeviseModel, x: np.ndarray, q: BagOfWords) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d_i,):
        raise DimensionMismatch(f"feature length {x.shape} vs model d_i {model.d_i}")
    return float(np.dot(model.W_i @ x, devise_embed_query(q, model.table)))


@dataclass(frozen=True)
class LabelPrediction:
    """Top-m classifier labels for one image with their relevance scores."""

    image_id: str
    labels: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if not self.labels:
            raise ConfigError("a label prediction needs at least one label")
        for label, p in self.labels:
            if not 0 < p <= 1:
                raise ConfigError(f"label probability {p} for {label!r} not in (0, 1]")


def parse_label_predictions(source, strict: bool = False) -> dict[str, LabelPrediction]:
    """TSV ``image_id<TAB>label:prob,label:prob,...``."""
    out: dict[str, LabelPrediction] = {}
    for line_no, line in enumerate(_text_lines(source), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        try:
            parts = line.split("\t")
            if len(parts) != 2:
                raise MalformedLine(line_no, f"expected 2 fields, got {len(parts)}")
            image_id, payload = parts
            labels = []
            for item in payload.split(","):
                label, _, prob_text = item.rpartition(":")
                if not label:
                    raise MalformedLine(line_no, f"missing ':' in {item!r}")
                try:
                    p = float(prob_text)
                except ValueError:
                    raise MalformedLine(line_no, f"bad probability {prob_text!r}") from None
                if not 0 < p <= 1:
                    raise MalformedLine(line_no, f"probability {p} not in (0, 1]")
                labels.append((label, p))
            out[image_id] = LabelPrediction(image_id, tuple(labels))
        except MalformedLine:
            if strict:
                raise
            continue
    return out


def conse_embed_image(pred: LabelPrediction, table: EmbeddingTable) -> np.ndarray:
    """Probability-weighted convex combination of label embeddings.

    Multi-word labels embed by mean pooling their in-table words; labels with
    no embeddable word are dropped, and the normalizer sums probabilities of
    the labels actually used.
    """
    vectors = []
    weights = []
    for label, p in pred.labels:
        words = [w for w in label.lower().split() if w in table]
        if not words:
            continue
        vectors.append(np.mean([table.get(w) for w in words], axis=0))
        weights.append(p)
    if not vectors:
        raise NoResolvableLabel(f"no label of image {pred.image_id!r} is embeddable")
    weights_arr = np.array(weights)
    return np.asarray(vectors).T @ weights_arr / weights_arr.sum()


def conse_score(img_emb: np.ndarray, q_emb: np.ndarray) -> float:
    """Cosine similarity in the word-embedding space."""
    img_emb = np.asarray(img_emb, dtype=np.float64)
    q_emb = np.asarray(q_emb, dtype=np.float64)
    if img_emb.shape != q_emb.shape:
        raise DimensionMismatch(f"vector lengths differ: {img_emb.shape} vs {q_emb.shape}")
    ni, nq = np.linalg.norm(img_emb), np.linalg.norm(q_emb)
    if ni == 0.0 or nq == 0.0:
        raise ZeroVector("cosine undefined for zero-norm vector")
    return float(np.dot(img_emb, q_emb) / (ni * nq))


def psi_batch_gradients(
    W_i: np.ndarray,
    W_t: np.ndarray,
    Q: np.ndarray,
    Xp: np.ndarray,
    Xn: np.ndarray,
    margin: float = 1.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean hinge loss over a triplet batch and its gradients w.r.t. both maps.

    Only triplets with positive loss contribute gradient, matching the
    subgradient of the hinge.
    """
    phi_t = Q @ W_t.T
    grad_wi, extras = _image_side_gradients(W_i, phi_t, Xp, Xn, margin)
    losses, active, e_pos, e_neg = extras
    grad_wt = (e_neg - e_pos)[active].T @ Q[active] / len(losses)
    return float(losses.mean()), grad_wi, grad_wt


def devise_batch_gradients(
    W_i: np.ndarray,
    Phi: np.ndarray,
    Xp: np.ndarray,
    Xn: np.ndarray,
    margin: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Mean hinge loss and W_i gradient with fixed query embeddings Phi."""
    grad_wi, extras = _image_side_gradients(W_i, Phi, Xp, Xn, margin)
    return float(extras[0].mean()), grad_wi


def _image_side_gradients(W_i, phi_t, Xp, Xn, margin):
    e_pos = Xp @ W_i.T
    e_neg = Xn @ W_i.T
    f_pos = np.einsum("bc,bc->b", e_pos, phi_t)
    f_neg = np.einsum("bc,bc->b", e_neg, phi_t)
    losses = np.maximum(0.0, margin - f_pos + f_neg)
    active = losses > 0
    grad_wi = phi_t[active].T @ (Xn[active] - Xp[active]) / len(losses)
    return grad_wi, (losses, active, e_pos, e_neg)


def _uniform_init(rng: np.random.Generator, shape: tuple[int, int], d_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(d_in)
    return rng.uniform(-bound, bound, size=shape)


def _epoch_batches(n: int, batch: int, order: np.ndarray):
    for start in range(0, n, batch):
        yield order[start : start + batch]


def train_psi(
    log: ClickLog, store: FeatureStore, cfg: TrainConfig
) -> tuple[PsiModel, list[float]]:
    """Minimize the summed triplet hinge by mini-batch SGD with exponentially
    decaying learning rate. Returns the model and the per-epoch mean loss."""
    cfg.validate()
    vocab = build_vocabulary(log)
    model = PsiModel(
        _uniform_init(np.random.default_rng([cfg.seed, 101]), (cfg.d_c, store.dim), store.dim),
        _uniform_init(np.random.default_rng([cfg.seed, 102]), (cfg.d_c, len(vocab)), len(vocab)),
        vocab,
    )
    index = {w: i for i, w in enumerate(vocab)}
    losses = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr0 * cfg.decay**epoch
        triplets = sample_triplets(log, np.random.default_rng([cfg.seed, 201, epoch]))
        rows = []
        for t in triplets:
            idx = [index[w] for w in t.q.word_set if w in index]
            if idx:
                rows.append((idx, t.x_pos, t.x_neg))
        if not rows:
            losses.append(0.0)
            continue
        order = np.random.default_rng([cfg.seed, 202, epoch]).permutation(len(rows))
        loss_sum = 0.0
        for batch_idx in _epoch_batches(len(rows), cfg.batch, order):
            q_mat = np.zeros((len(batch_idx), len(vocab)))
            for r, i in enumerate(batch_idx):
                q_mat[r, rows[i][0]] = 1.0
            x_pos = store.rows([rows[i][1] for i in batch_idx])
            x_neg = store.rows([rows[i][2] for i in batch_idx])
            mean_loss, g_wi, g_wt = psi_batch_gradients(
                model.W_i, model.W_t, q_mat, x_pos, x_neg, cfg.margin
            )
            loss_sum += mean_loss * len(batch_idx)
            model.W_i -= lr * g_wi
            model.W_t -= lr * g_wt
        losses.append(loss_sum / len(rows))
    return model, losses


def train_devise(
    log: ClickLog, store: FeatureStore, table: EmbeddingTable, cfg: TrainConfig
) -> tuple[DeviseModel, list[float]]:
    """As train_psi, but only the image transformation is learned; the query
    side is the fixed mean-pooled word embedding. Requires table dim == d_c."""
    cfg.validate()
    if table.dim != cfg.d_c:
        raise ConfigError(f"embedding dim {table.dim} must equal d_c {cfg.d_c}")
    model = DeviseModel(
        _uniform_init(np.random.default_rng([cfg.seed, 101]), (cfg.d_c, store.dim), store.dim),
        table,
    )
    phi_cache: dict[tuple[str, ...], np.ndarray | None] = {}

    def embed(q: BagOfWords) -> np.ndarray | None:
        key = q.key()
        if key not in phi_cache:
            try:
                phi_cache[key] = devise_embed_query(q, table)
            except AllWordsOutOfVocabulary:
                phi_cache[key] = None
        return phi_cache[key]

    losses = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr0 * cfg.decay**epoch
        triplets = sample_triplets(log, np.random.default_rng([cfg.seed, 201, epoch]))
        rows = [(embed(t.q), t.x_pos, t.x_neg) for t in triplets]
        rows = [r for r in rows if r[0] is not None]
        if not rows:
            losses.append(0.0)
            continue
        order = np.random.default_rng([cfg.seed, 202, epoch]).permutation(len(rows))
        loss_sum = 0.0
        for batch_idx in _epoch_batches(len(rows), cfg.batch, order):
            phi = np.array([rows[i][0] for i in batch_idx])
            x_pos = store.rows([rows[i][1] for i in batch_idx])
            x_neg = store.rows([rows[i][2] for i in batch_idx])
            mean_loss, g_wi = devise_batch_gradients(model.W_i, phi, x_pos, x_neg, cfg.margin)
            loss_sum += mean_loss * len(batch_idx)
            model.W_i -= lr * g_wi
        losses.append(loss_sum / len(rows))
    return model, losses


def save_checkpoint(model: PsiModel | DeviseModel, path: str | Path) -> None:
    """Text header (kind, dims, vocab) followed by row-major float64 matrices."""
    with open(path, "wb") as fh:
        if isinstance(model, PsiModel):
            fh.write(f"{CHECKPOINT_MAGIC} psi\n".encode("utf-8"))
            fh.write(f"{model.d_c} {model.d_i} {model.d_t}\n".encode("utf-8"))
            fh.write(f"vocab {len(model.vocab)}\n".encode("utf-8"))
            for word in model.vocab:
                fh.write(f"{word}\n".encode("utf-8"))
            fh.write(b"matrices\n")
            fh.write(np.ascontiguousarray(model.W_i, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(model.W_t, dtype="<f8").tobytes())
        else:
            fh.write(f"{CHECKPOINT_MAGIC} devise\n".encode("utf-8"))
            fh.write(f"{model.d_c} {model.d_i} {model.d_c}\n".encode("utf-8"))
            fh.write(b"vocab 0\n")
            fh.write(b"matrices\n")
            fh.write(np.ascontiguousarray(model.W_i, dtype="<f8").tobytes())


def load_checkpoint(
    path: str | Path, table: EmbeddingTable | None = None
) -> PsiModel | DeviseModel:
    """Load a checkpoint; DeViSE checkpoints need the embedding table."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("utf-8").strip()
        if not magic.startswith(CHECKPOINT_MAGIC):
            raise MalformedLine(1, f"bad checkpoint magic {magic!r}")
        kind = magic[len(CHECKPOINT_MAGIC) :].strip()
        if kind not in ("psi", "devise"):
            raise MalformedLine(1, f"unknown checkpoint kind {kind!r}")
        d_c, d_i, d_t = (int(v) for v in fh.readline().split())
        vocab_header = fh.readline().decode("utf-8").split()
        if len(vocab_header) != 2 or vocab_header[0] != "vocab":
            raise MalformedLine(3, "missing vocab header")
        vocab = tuple(fh.readline().decode("utf-8").rstrip("\n") for _ in range(int(vocab_header[1])))
        if fh.readline() != b"matrices\n":
            raise MalformedLine(0, "missing matrices marker")
        w_i = np.frombuffer(fh.read(8 * d_c * d_i), dtype="<f8").reshape(d_c, d_i).copy()
        if kind == "psi":
            w_t = np.frombuffer(fh.read(8 * d_c * d_t), dtype="<f8").reshape(d_c, d_t).copy()
            if fh.read(1):
                raise MalformedLine(0, "trailing bytes in checkpoint")
            return PsiModel(w_i, w_t, vocab)
        if fh.read(1):
            raise MalformedLine(0, "trailing bytes in checkpoint")
        if table is None:
            raise ConfigError("a DeViSE checkpoint needs its embedding table to load")
        return DeviseModel(w_i, table)
