"""Late fusion of per-model score tables.

Fused score = sum of weights times sigmoid-rescaled model scores. Weights can
be uniform or learned by Coordinate Ascent, a greedy per-dimension grid
search that directly optimizes the (non-differentiable) ranking metric.
Sigmoid is applied to raw scores by default; optional per-model
z-normalization is available because model score scales differ wildly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import JudgmentSet, _text_lines
from .errors import ConfigError, EmptyJudgments, MalformedLine, PairSetMismatch


@dataclass
class ScoreTable:
    """Per-(query, image) real-valued scores from one model."""

    model_id: str
    scores: dict[tuple[str, str], float]

    def pair_set(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.scores)

    def pools(self) -> dict[str, list[str]]:
        """Per-query image lists covered by this table, image id ascending."""
        pools: dict[str, list[str]] = {}
        for qid, img in sorted(self.scores):
            pools.setdefault(qid, []).append(img)
        return pools


def read_run_file(source, model_id: str | None = None) -> ScoreTable:
    if model_id is None:
        model_id = Path(source).stem if isinstance(source, (str, Path)) else "run"
    scores: dict[tuple[str, str], float] = {}
    for line_no, line in enumerate(_text_lines(source), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLine(line_no, f"expected 3 fields, got {len(parts)}")
        qid, image_id, score_text = parts
        try:
            score = float(score_text)
        except ValueError:
            raise MalformedLine(line_no, f"bad score {score_text!r}") from None
        if not np.isfinite(score):
            raise MalformedLine(line_no, f"non-finite score {score_text!r}")
        scores[(qid, image_id)] = score
    return ScoreTable(model_id, scores)


def write_run_file(table: ScoreTable, path: str | Path) -> None:
    """Canonical form: rows sorted by (query_id, image_id)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, image_id in sorted(table.scores):
            fh.write(f"{qid}\t{image_id}\t{table.scores[(qid, image_id)]!r}\n")


@dataclass
class FusionWeights:
    """Non-negative per-model weights; learning normalizes them to sum 1."""

    weights: dict[str, float]

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("fusion weights must be non-negative")
        if not any(w > 0 for w in self.weights.values()):
            raise ConfigError("at least one fusion weight must be positive")

    def get(self, model_id: str) -> float:
        return self.weights.get(model_id, 0.0)


def read_weights(source) -> FusionWeights:
    weights = {}
    for line_no, line in enumerate(_text_lines(source), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise MalformedLine(line_no, f"expected 2 fields, got {len(parts)}")
        try:
            weights[parts[0]] = float(parts[1])
        except ValueError:
            raise MalformedLine(line_no, f"bad weight {parts[1]!r}") from None
    return FusionWeights(weights)


def write_weights(w: FusionWeights, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for model_id in sorted(w.weights):
            fh.write(f"{model_id}\t{w.weights[model_id]!r}\n")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_pair_sets(tables: list[ScoreTable]) -> list[tuple[str, str]]:
    if not tables:
        raise ConfigError("need at least one score table")
    pairs = tables[0].pair_set()
    for t in tables[1:]:
        if t.pair_set() != pairs:
            raise PairSetMismatch(
                f"table {t.model_id!r} covers a different pair set than {tables[0].model_id!r}"
            )
    return sorted(pairs)


def _sigmoid_matrix(tables: list[ScoreTable], pairs: list[tuple[str, str]], znorm: bool) -> np.ndarray:
    cols = []
    for t in tables:
        vals = np.array([t.scores[p] for p in pairs])
        if znorm:
            std = vals.std()
            vals = (vals - vals.mean()) / std if std > 0 else np.zeros_like(vals)
        cols.append(sigmoid(vals))
    return np.column_stack(cols)


def fuse(tables: list[ScoreTable], w: FusionWeights, znorm: bool = False) -> ScoreTable:
    """Weighted sum of sigmoid-rescaled scores; tables missing from the
    weight map contribute 0."""
    pairs = _check_pair_sets(tables)
    mat = _sigmoid_matrix(tables, pairs, znorm)
    lam = np.array([w.get(t.model_id) for t in tables])
    fused = mat @ lam
    return ScoreTable("fusion", {p: float(v) for p, v in zip(pairs, fused)})


def average_fuse(tables: list[ScoreTable], znorm: bool = False) -> ScoreTable:
    """Uniform-weight fusion."""
    w = FusionWeights({t.model_id: 1.0 / len(tables) for t in tables})
    return fuse(tables, w, znorm)


@dataclass(frozen=True)
class CoordinateAscentConfig:
    restarts: int = 3
    steps_per_dim: int = 21
    sweeps: int = 25
    seed: int = 0

    def validate(self) -> None:
        if self.restarts < 1 or self.steps_per_dim < 2 or self.sweeps < 1:
            raise ConfigError("restarts, steps_per_dim and sweeps must be positive")


class _WeightEvaluator:
    """Mean ranking metric of a fused run, as a function of the weight vector.

    Rows are pre-sorted by (query_id, image_id), so a stable argsort on
    negated fused scores realizes the score-descending / id-ascending order.
    """

    def __init__(
        self,
        tables: list[ScoreTable],
        judgments: JudgmentSet,
        metric: str,
        cutoff: int,
        znorm: bool,
    ):
        from .evaluation import ndcg_normalizer

        if metric not in ("ndcg", "map"):
            raise ConfigError(f"unknown fusion metric {metric!r}; use 'ndcg' or 'map'")
        pairs = _check_pair_sets(tables)
        if len(judgments) == 0:
            raise EmptyJudgments("no judgments provided")
        self.metric = metric
        self.cutoff = cutoff
        self.matrix = _sigmoid_matrix(tables, pairs, znorm)
        grades = np.array([judgments.grade(q, i) for q, i in pairs], dtype=np.float64)
        if not any(judgments.is_judged(q, i) for q, i in pairs):
            raise EmptyJudgments("judgments cover none of the scored queries")
        self.gains = np.power(2.0, grades) - 1.0
        self.rel = grades > 0
        self.slices = []
        start = 0
        for i in range(1, len(pairs) + 1):
            if i == len(pairs) or pairs[i][0] != pairs[start][0]:
                self.slices.append((start, i))
                start = i
        self.discounts = 1.0 / np.log2(np.arange(2, 2 + max(e - s for s, e in self.slices)))
        self.norm = ndcg_normalizer(cutoff)

    def __call__(self, w: np.ndarray) -> float:
        fused = self.matrix @ w
        total = 0.0
        for s, e in self.slices:
            order = np.argsort(-fused[s:e], kind="stable")
            if self.metric == "ndcg":
                g = self.gains[s:e][order][: self.cutoff]
                total += self.norm * float(g @ self.discounts[: len(g)])
            else:
                rel = self.rel[s:e][order]
                n_rel = int(rel.sum())
                if n_rel:
                    hits = np.flatnonzero(rel)
                    total += float(
                        np.mean((np.arange(1, n_rel + 1)) / (hits + 1.0))
                    )
        return total / len(self.slices)


def coordinate_ascent(
    tables: list[ScoreTable],
    judgments: JudgmentSet,
    metric: str = "ndcg",
    cfg: CoordinateAscentConfig = CoordinateAscentConfig(),
    cutoff: int = 25,
    znorm: bool = False,
) -> FusionWeights:
    """Greedy per-dimension line search over a fixed grid, restarted from
    uniform weights plus seeded random simplex points.

    A line-search move requires strict improvement, and the uniform vector
    is always an evaluated final candidate, so the returned weights never
    score below uniform fusion on the training judgments. Returned weights
    sum to 1.
    """
    cfg.validate()
    evaluate = _WeightEvaluator(tables, judgments, metric, cutoff, znorm)
    d = len(tables)
    grid = np.linspace(0.0, 1.0, cfg.steps_per_dim)
    uniform = np.full(d, 1.0 / d)

    def run_restart(w0: np.ndarray) -> np.ndarray:
        w = w0.copy()
        best = evaluate(w)
        for _ in range(cfg.sweeps):
            improved = False
            for dim in range(d):
                best_g = w[dim]
                best_score = best
                for g in grid:
                    if g == w[dim]:
                        continue
                    cand = w.copy()
                    cand[dim] = g
                    if not cand.any():
                        continue
                    score = evaluate(cand)
                    if score > best_score:
                        best_score, best_g = score, g
                if best_g != w[dim]:
                    w[dim] = best_g
                    best = best_score
                    improved = True
            w = w / w.sum()
            best = evaluate(w)
            if not improved:
                break
        return w

    candidates = [uniform]
    starts = [uniform] + [
        np.random.default_rng([cfg.seed, 301, r]).dirichlet(np.ones(d))
        for r in range(1, cfg.restarts)
    ]
    candidates.extend(run_restart(w0) for w0 in starts)
    # First candidate wins ties, so identical-scoring candidates resolve to
    # uniform weights.
    best_w = candidates[0]
    best_score = evaluate(candidates[0])
    for cand in candidates[1:]:
        score = evaluate(cand)
        if score > best_score:
            best_score, best_w = score, cand
    return FusionWeights({t.model_id: float(v) for t, v in zip(tables, best_w)})
