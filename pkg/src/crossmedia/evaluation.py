"""Ranking metrics and evaluation protocols.

NDCG uses gain 2^rel - 1 with the fixed normalization constant 0.01757 at
the default cutoff of 25: that constant equals
1/(7 * sum_{i=1..25} 1/log2(i+1)), the inverse score of an ideal ranking of
25 Excellent images, which is what makes such a ranking score 1. Other
cutoffs use the analogously computed constant.

The significance test is a randomization test: per trial, the per-query
scores of exactly half the queries (selected at random) are swapped between
the two systems and the absolute mean difference is recompared. The classic
per-query coin-flip variant is available as ``variant="flip"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .corpus import JudgmentSet, _text_lines
from .errors import (
    ConfigError,
    InvalidGrade,
    MalformedLine,
    PairSetMismatch,
    QuerySetMismatch,
)
from .fusion import ScoreTable

NDCG25_CONSTANT = 0.01757

RankedRun = dict[str, list[str]]
PerQueryScores = dict[str, float]


def ndcg_normalizer(cutoff: int) -> float:
    """Inverse ideal DCG of `cutoff` Excellent grades; the literal constant
    0.01757 at cutoff 25."""
    if cutoff == 25:
        return NDCG25_CONSTANT
    if cutoff < 1:
        raise ConfigError(f"cutoff must be positive, got {cutoff}")
    ideal = 7.0 * sum(1.0 / math.log2(i + 1) for i in range(1, cutoff + 1))
    return 1.0 / ideal


def ndcg(grades_in_rank_order, cutoff: int = 25) -> float:
    """Normalized discounted cumulative gain with gain 2^rel - 1."""
    total = 0.0
    for i, grade in enumerate(grades_in_rank_order[:cutoff], start=1):
        if grade not in (0, 2, 3):
            raise InvalidGrade(f"grade {grade!r} not in {{0, 2, 3}}")
        total += (2.0**grade - 1.0) / math.log2(i + 1)
    return ndcg_normalizer(cutoff) * total


def ndcg25(grades_in_rank_order) -> float:
    return ndcg(grades_in_rank_order, cutoff=25)


def rank_images(scores: ScoreTable, pools: dict[str, list[str]]) -> RankedRun:
    """Rank each query's pool by score descending, image id ascending on ties.

    Every pooled image must be scored. Duplicate pool entries are dropped
    after the first so rankings never repeat an image.
    """
    run: RankedRun = {}
    for qid in sorted(pools):
        entries = []
        seen = set()
        for img in pools[qid]:
            if img in seen:
                continue
            seen.add(img)
            score = scores.scores.get((qid, img))
            if score is None:
                raise PairSetMismatch(f"no score for pooled pair ({qid!r}, {img!r})")
            entries.append((-score, img))
        entries.sort()
        run[qid] = [img for _, img in entries]
    return run


def mean_ndcg(
    run: RankedRun, judgments: JudgmentSet, cutoff: int = 25
) -> tuple[float, PerQueryScores]:
    """Arithmetic mean of per-query NDCG; unjudged images count as grade 0."""
    per_query: PerQueryScores = {}
    for qid, ranking in run.items():
        if qid not in judgments.query_text:
            raise QuerySetMismatch(f"run query {qid!r} absent from judgments")
        grades = [judgments.grade(qid, img) for img in ranking]
        per_query[qid] = ndcg(grades, cutoff)
    if not per_query:
        raise QuerySetMismatch("empty run")
    return sum(per_query.values()) / len(per_query), per_query


def average_precision(binary_in_rank_order) -> float:
    """AP = (1/R) * sum of precision@k over relevant ranks; 0 when nothing
    is relevant."""
    hits = 0
    total = 0.0
    for k, rel in enumerate(binary_in_rank_order, start=1):
        if rel:
            hits += 1
            total += hits / k
    return total / hits if hits else 0.0


def mean_average_precision(
    run: RankedRun, judgments: JudgmentSet
) -> tuple[float, PerQueryScores]:
    """MAP with positives = grade > 0 (Good and Excellent)."""
    per_query: PerQueryScores = {}
    for qid, ranking in run.items():
        if qid not in judgments.query_text:
            raise QuerySetMismatch(f"run query {qid!r} absent from judgments")
        flags = [judgments.grade(qid, img) > 0 for img in ranking]
        per_query[qid] = average_precision(flags)
    if not per_query:
        raise QuerySetMismatch("empty run")
    return sum(per_query.values()) / len(per_query), per_query


@dataclass(frozen=True)
class RandomizationResult:
    diff: float
    trials: int
    p_value: float
    significant: bool
    method: str


def randomization_test(
    a: PerQueryScores,
    b: PerQueryScores,
    trials: int = 10_000,
    seed: int = 0,
    variant: str = "half",
    exhaustive: bool | None = None,
) -> RandomizationResult:
    """Estimate the p-value of the observed |mean(a) - mean(b)|.

    variant="half" (alias "paper"): each trial swaps the scores of exactly
    floor(n/2) queries chosen uniformly without replacement.
    variant="flip": each query's pair is swapped independently with
    probability 1/2. With exhaustive=None, full enumeration replaces
    sampling whenever the trial space has at most 10^6 elements.
    """
    if set(a) != set(b):
        raise QuerySetMismatch("the two systems score different query sets")
    if len(a) < 2:
        raise ConfigError("need at least 2 queries")
    if variant == "paper":
        variant = "half"
    if variant not in ("half", "flip"):
        raise ConfigError(f"unknown variant {variant!r}")
    keys = sorted(a)
    d = np.array([a[k] - b[k] for k in keys])
    n = len(d)
    base = float(d.mean())
    diff = abs(base)

    if variant == "half":
        m = n // 2
        space = math.comb(n, m)
        if exhaustive is None:
            exhaustive = space <= 1_000_000
        if exhaustive:
            hits = 0
            for subset in combinations(range(n), m):
                new_diff = abs(base - 2.0 * float(d[list(subset)].sum()) / n)
                if new_diff >= diff:
                    hits += 1
            return RandomizationResult(
                diff, space, hits / space, hits / space < 0.05, "half-exhaustive"
            )
        rng = np.random.default_rng([seed, 11])
        idx = np.argsort(rng.random((trials, n)), axis=1)[:, :m]
        swap_sums = np.take_along_axis(np.broadcast_to(d, (trials, n)), idx, axis=1).sum(axis=1)
        new_diffs = np.abs(base - 2.0 * swap_sums / n)
        p = float(np.count_nonzero(new_diffs >= diff)) / trials
        return RandomizationResult(diff, trials, p, p < 0.05, "half-montecarlo")

    space = 2**n if n < 64 else None
    if exhaustive is None:
        exhaustive = space is not None and space <= 1_000_000
    if exhaustive:
        if space is None:
            raise ConfigError(f"cannot enumerate 2^{n} sign patterns")
        hits = 0
        for mask in range(space):
            signs = np.fromiter(
                ((1.0 if mask & (1 << i) == 0 else -1.0) for i in range(n)), float, n
            )
            if abs(float((d * signs).mean())) >= diff:
                hits += 1
        return RandomizationResult(
            diff, space, hits / space, hits / space < 0.05, "flip-exhaustive"
        )
    rng = np.random.default_rng([seed, 12])
    signs = rng.integers(0, 2, size=(trials, n)) * 2.0 - 1.0
    new_diffs = np.abs((signs * d).mean(axis=1))
    p = float(np.count_nonzero(new_diffs >= diff)) / trials
    return RandomizationResult(diff, trials, p, p < 0.05, "flip-montecarlo")


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    positions = np.arange(1, len(values) + 1, dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = positions[i : j + 1].mean()
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Pearson correlation of average-tie ranks.

    Degenerate inputs with zero rank variance return 0.0.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ConfigError("spearman needs two equal-length vectors")
    if len(xs) < 2:
        raise ConfigError("spearman needs at least 2 points")
    rx = _average_ranks(xs)
    ry = _average_ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        return 0.0
    return float(rx @ ry) / denom


def inject_noise(
    testset: dict[str, list[str]],
    h: int,
    judgments: JudgmentSet,
    rng: np.random.Generator,
) -> dict[str, list[str]]:
    """Add h*n images per query, drawn from other queries' pools.

    Donor candidates exclude every image judged for the receiving query, so
    injected images are genuinely unjudged there and evaluate as grade 0.
    Sampling is a without-replacement permutation prefix, so pools for
    smaller h nest inside pools for larger h under the same seed; draws fall
    back to replacement only once the donor pool is exhausted.
    """
    if h < 0:
        raise ConfigError(f"h must be >= 0, got {h}")
    judged_for: dict[str, set[str]] = {}
    for (qid, img) in judgments.entries:
        judged_for.setdefault(qid, set()).add(img)
    all_images: dict[str, set[str]] = {q: set(pool) for q, pool in testset.items()}
    out: dict[str, list[str]] = {}
    for qid in sorted(testset):
        pool = list(testset[qid])
        # one fixed-size draw per query keeps the stream position independent
        # of h and donor counts, which is what makes pools nest across h
        salt = int(rng.integers(np.iinfo(np.int64).max))
        need = h * len(pool)
        if need == 0:
            out[qid] = pool
            continue
        excluded = judged_for.get(qid, set()) | all_images[qid]
        donors = sorted(
            {img for q2, imgs in all_images.items() if q2 != qid for img in imgs} - excluded
        )
        if not donors:
            out[qid] = pool
            continue
        qrng = np.random.default_rng([salt])
        perm = qrng.permutation(len(donors))
        take = [donors[i] for i in perm[:need]]
        if need > len(donors):
            extra = qrng.integers(0, len(donors), size=need - len(donors))
            take.extend(donors[int(i)] for i in extra)
        out[qid] = pool + take
    return out


def random_scores(pools: dict[str, list[str]], seed: int) -> ScoreTable:
    """The random baseline: i.i.d. uniform scores per (query, image) pair."""
    rng = np.random.default_rng([seed, 99])
    scores = {}
    for qid in sorted(pools):
        for img in sorted(set(pools[qid])):
            scores[(qid, img)] = float(rng.random())
    return ScoreTable("random", scores)


def write_per_query_report(
    per_query: PerQueryScores, overall: float, path: str | Path, header: str
) -> None:
    """TSV with one row per query and a final ALL row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"query_id\t{header}\n")
        for qid in sorted(per_query):
            fh.write(f"{qid}\t{per_query[qid]!r}\n")
        fh.write(f"ALL\t{overall!r}\n")


def read_per_query_report(source) -> tuple[PerQueryScores, float | None]:
    """Parse a per-query report; returns (per_query, overall or None)."""
    per_query: PerQueryScores = {}
    overall = None
    for line_no, line in enumerate(_text_lines(source), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise MalformedLine(line_no, "expected at least 2 fields")
        if line_no == 1 and parts[0] == "query_id":
            continue
        try:
            value = float(parts[1])
        except ValueError:
            raise MalformedLine(line_no, f"bad metric value {parts[1]!r}") from None
        if parts[0] == "ALL":
            overall = value
        else:
            per_query[parts[0]] = value
    return per_query, overall
