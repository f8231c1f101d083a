import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossmedia.corpus import parse_judgments
from crossmedia.errors import (
    ConfigError,
    InvalidGrade,
    PairSetMismatch,
    QuerySetMismatch,
)
from crossmedia.evaluation import (
    NDCG25_CONSTANT,
    average_precision,
    inject_noise,
    mean_average_precision,
    mean_ndcg,
    ndcg,
    ndcg25,
    ndcg_normalizer,
    randomization_test,
    random_scores,
    rank_images,
    read_per_query_report,
    spearman,
    write_per_query_report,
)
from crossmedia.fusion import ScoreTable


def judgments_from(rows):
    text = "".join(f"{q}\t{q} text\t{i}\t{g}\n" for q, i, g in rows)
    return parse_judgments(io.StringIO(text))


class TestNdcg:
    def test_constant_matches_ideal_inverse(self):
        ideal = 7.0 * sum(1.0 / math.log2(i + 1) for i in range(1, 26))
        assert abs(NDCG25_CONSTANT - 1.0 / ideal) < 1e-5

    def test_all_excellent_is_one(self):
        assert 0.9998 <= ndcg25([3] * 25) <= 1.0002

    def test_all_bad_is_zero(self):
        assert ndcg25([0] * 25) == 0.0

    def test_single_excellent_then_zeros(self):
        assert ndcg25([3] + [0] * 24) == pytest.approx(0.01757 * 7)

    def test_short_list_sums_available_ranks(self):
        assert ndcg25([3]) == pytest.approx(0.01757 * 7)

    def test_cutoff_truncates(self):
        long = [3] * 30
        assert ndcg(long, cutoff=25) == ndcg25([3] * 25)

    def test_invalid_grade_rejected(self):
        with pytest.raises(InvalidGrade):
            ndcg25([3, 1, 0])

    def test_other_cutoffs_normalize_to_one(self):
        for cutoff in (5, 10, 40):
            assert ndcg([3] * cutoff, cutoff=cutoff) == pytest.approx(1.0)

    def test_never_beats_ideal_reordering_exhaustive(self):
        grade_sets = set()
        for n in range(1, 7):
            for combo in itertools.combinations_with_replacement((0, 2, 3), n):
                grade_sets.add(combo)
        for grades in grade_sets:
            ideal = ndcg25(sorted(grades, reverse=True))
            for perm in set(itertools.permutations(grades)):
                assert ndcg25(list(perm)) <= ideal + 1e-12

    def test_normalizer_requires_positive_cutoff(self):
        with pytest.raises(ConfigError):
            ndcg_normalizer(0)


class TestRankImages:
    def test_equal_scores_break_by_id(self):
        t = ScoreTable("m", {("q", "b"): 1.0, ("q", "a"): 1.0, ("q", "c"): 1.0})
        assert rank_images(t, {"q": ["c", "b", "a"]}) == {"q": ["a", "b", "c"]}

    def test_strictly_decreasing_scores_keep_order(self):
        t = ScoreTable("m", {("q", "x"): 3.0, ("q", "y"): 2.0, ("q", "z"): 1.0})
        assert rank_images(t, {"q": ["z", "y", "x"]}) == {"q": ["x", "y", "z"]}

    def test_input_permutation_irrelevant(self):
        rng = np.random.default_rng(0)
        imgs = [f"i{k}" for k in range(10)]
        t = ScoreTable("m", {("q", i): float(rng.random()) for i in imgs})
        a = rank_images(t, {"q": imgs})
        b = rank_images(t, {"q": imgs[::-1]})
        assert a == b

    def test_missing_score_rejected(self):
        t = ScoreTable("m", {("q", "a"): 1.0})
        with pytest.raises(PairSetMismatch):
            rank_images(t, {"q": ["a", "b"]})

    def test_duplicate_pool_entries_dropped(self):
        t = ScoreTable("m", {("q", "a"): 1.0, ("q", "b"): 2.0})
        assert rank_images(t, {"q": ["a", "b", "a"]}) == {"q": ["b", "a"]}


class TestMeanNdcg:
    def test_single_query_passthrough(self):
        judg = judgments_from([("q", "a", 3), ("q", "b", 0)])
        overall, per_query = mean_ndcg({"q": ["a", "b"]}, judg)
        assert overall == per_query["q"] == ndcg25([3, 0])

    def test_mean_of_two_queries(self):
        judg = judgments_from([("q1", "a", 3), ("q2", "b", 0)])
        overall, pq = mean_ndcg({"q1": ["a"], "q2": ["b"]}, judg)
        assert overall == pytest.approx((pq["q1"] + pq["q2"]) / 2)
        assert pq["q2"] == 0.0

    def test_unjudged_images_grade_zero(self):
        judg = judgments_from([("q", "a", 3)])
        overall, _ = mean_ndcg({"q": ["mystery", "a"]}, judg)
        assert overall == pytest.approx(ndcg25([0, 3]))

    def test_unknown_query_rejected(self):
        judg = judgments_from([("q", "a", 3)])
        with pytest.raises(QuerySetMismatch):
            mean_ndcg({"other": ["a"]}, judg)

    def test_ideal_ranking_maximizes_exhaustively(self):
        judg = judgments_from(
            [("q", "a", 3), ("q", "b", 2), ("q", "c", 0), ("q", "d", 3), ("q", "e", 2)]
        )
        pool = ["a", "b", "c", "d", "e"]
        ideal_order = sorted(pool, key=lambda i: (-judg.grade("q", i), i))
        ideal_score, _ = mean_ndcg({"q": ideal_order}, judg)
        best = max(
            mean_ndcg({"q": list(perm)}, judg)[0] for perm in itertools.permutations(pool)
        )
        assert ideal_score == pytest.approx(best)


class TestAveragePrecision:
    def test_all_positives_first(self):
        assert average_precision([1, 1, 0, 0]) == 1.0

    def test_single_positive_second(self):
        assert average_precision([0, 1]) == 0.5

    def test_pos_neg_pos(self):
        assert average_precision([1, 0, 1]) == pytest.approx((1.0 + 2 / 3) / 2)

    def test_no_positive_is_zero(self):
        assert average_precision([0, 0, 0]) == 0.0

    def test_map_binarizes_good_and_excellent(self):
        judg = judgments_from([("q", "a", 2), ("q", "b", 0), ("q", "c", 3)])
        overall, _ = mean_average_precision({"q": ["a", "b", "c"]}, judg)
        assert overall == pytest.approx((1.0 + 2 / 3) / 2)

    def test_rank_metrics_see_only_order(self):
        judg = judgments_from([("q", "a", 3), ("q", "b", 2), ("q", "c", 0)])
        base = ScoreTable("m", {("q", "a"): 3.0, ("q", "b"): 2.0, ("q", "c"): 1.0})
        squashed = ScoreTable(
            "m", {p: math.tanh(s) for p, s in base.scores.items()}
        )
        pools = {"q": ["a", "b", "c"]}
        for metric in (mean_ndcg, mean_average_precision):
            assert metric(rank_images(base, pools), judg)[0] == pytest.approx(
                metric(rank_images(squashed, pools), judg)[0]
            )


class TestRandomizationTest:
    def test_identical_systems_p_one(self):
        a = {f"q{k}": 0.5 for k in range(6)}
        result = randomization_test(a, dict(a), seed=1)
        assert result.p_value == 1.0
        assert result.diff == 0.0

    def test_constant_offset_even_n_p_zero(self):
        a = {f"q{k}": 0.6 for k in range(8)}
        b = {f"q{k}": 0.4 for k in range(8)}
        result = randomization_test(a, b, seed=1)
        assert result.p_value == 0.0

    def test_exhaustive_space_size(self):
        a = {f"q{k}": float(k) for k in range(8)}
        b = {f"q{k}": float(k) + 0.1 * (-1) ** k for k in range(8)}
        result = randomization_test(a, b)
        assert result.method == "half-exhaustive"
        assert result.trials == math.comb(8, 4)

    def test_monte_carlo_tracks_exhaustive(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for trial in range(20):
            keys = [f"q{k}" for k in range(8)]
            a = {k: float(v) for k, v in zip(keys, rng.random(8))}
            b = {k: float(v) for k, v in zip(keys, rng.random(8))}
            exact = randomization_test(a, b, exhaustive=True)
            approx = randomization_test(a, b, trials=10_000, seed=trial, exhaustive=False)
            worst = max(worst, abs(exact.p_value - approx.p_value))
        assert worst <= 0.02

    def test_symmetric_in_argument_order(self):
        rng = np.random.default_rng(3)
        keys = [f"q{k}" for k in range(12)]
        a = {k: float(v) for k, v in zip(keys, rng.random(12))}
        b = {k: float(v) for k, v in zip(keys, rng.random(12))}
        r1 = randomization_test(a, b, trials=2000, seed=5, exhaustive=False)
        r2 = randomization_test(b, a, trials=2000, seed=5, exhaustive=False)
        assert r1.p_value == r2.p_value

    def test_half_variant_accepts_legacy_alias(self):
        a = {f"q{k}": float(k) for k in range(6)}
        b = {f"q{k}": float(k) + 0.3 for k in range(6)}
        assert randomization_test(a, b, variant="paper") == randomization_test(
            a, b, variant="half"
        )

    def test_flip_variant_exhaustive(self):
        a = {"q1": 0.9, "q2": 0.8, "q3": 0.7}
        b = {"q1": 0.1, "q2": 0.2, "q3": 0.3}
        result = randomization_test(a, b, variant="flip")
        assert result.method == "flip-exhaustive"
        assert result.trials == 8
        assert result.p_value == pytest.approx(2 / 8)

    def test_query_set_mismatch(self):
        with pytest.raises(QuerySetMismatch):
            randomization_test({"a": 1.0, "b": 0.5}, {"a": 1.0, "c": 0.5})

    def test_too_few_queries(self):
        with pytest.raises(ConfigError):
            randomization_test({"a": 1.0}, {"a": 0.5})


class TestSpearman:
    def test_perfect_monotone(self):
        xs = [1.0, 2.0, 3.0, 4.0]
        assert spearman(xs, [v * 10 for v in xs]) == pytest.approx(1.0)

    def test_reversed(self):
        xs = [1.0, 2.0, 3.0, 4.0]
        assert spearman(xs, list(reversed(xs))) == pytest.approx(-1.0)

    @given(st.integers(3, 30), st.integers(0, 2**32 - 1))
    @settings(max_examples=100)
    def test_tie_free_closed_form(self, n, seed):
        rng = np.random.default_rng(seed)
        xs = rng.permutation(n).astype(float) + rng.random(n) * 0.25
        ys = rng.permutation(n).astype(float) + rng.random(n) * 0.25
        rx = np.argsort(np.argsort(xs)) + 1
        ry = np.argsort(np.argsort(ys)) + 1
        d2 = float(((rx - ry) ** 2).sum())
        closed = 1.0 - 6.0 * d2 / (n * (n**2 - 1))
        assert abs(spearman(xs, ys) - closed) < 1e-12

    def test_symmetry_and_transform_invariance(self):
        rng = np.random.default_rng(9)
        xs, ys = rng.random(15), rng.random(15)
        assert spearman(xs, ys) == pytest.approx(spearman(ys, xs))
        assert spearman(np.exp(xs), ys) == pytest.approx(spearman(xs, ys))

    def test_average_ranks_for_ties(self):
        # [1, 1, 2] -> ranks [1.5, 1.5, 3]
        rho = spearman([1.0, 1.0, 2.0], [5.0, 5.0, 9.0])
        assert rho == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            spearman([1.0, 2.0], [1.0])


class TestInjectNoise:
    def _setup(self, n_queries=4, pool=10):
        judg_rows = []
        pools = {}
        for qi in range(n_queries):
            q = f"q{qi}"
            pools[q] = [f"i{qi}_{k}" for k in range(pool)]
            judg_rows += [(q, img, 3 if k < 3 else 0) for k, img in enumerate(pools[q])]
        return pools, judgments_from(judg_rows)

    def test_h_zero_unchanged(self):
        pools, judg = self._setup()
        out = inject_noise(pools, 0, judg, np.random.default_rng(0))
        assert out == pools

    def test_counts_and_grades(self):
        pools, judg = self._setup()
        out = inject_noise(pools, 1, judg, np.random.default_rng(0))
        for q, pool in pools.items():
            assert len(out[q]) == 2 * len(pool)
            injected = out[q][len(pool):]
            assert len(injected) == len(pool)
            for img in injected:
                assert not judg.is_judged(q, img)
                assert judg.grade(q, img) == 0

    def test_deterministic_and_nested(self):
        pools, judg = self._setup()
        h1 = inject_noise(pools, 1, judg, np.random.default_rng([7, 31]))
        h1_again = inject_noise(pools, 1, judg, np.random.default_rng([7, 31]))
        h3 = inject_noise(pools, 3, judg, np.random.default_rng([7, 31]))
        assert h1 == h1_again
        for q in pools:
            assert h3[q][: len(h1[q])] == h1[q]

    def test_donors_exclude_judged_for_query(self):
        pools = {"q0": ["a", "b"], "q1": ["c", "d"]}
        judg = judgments_from(
            [("q0", "a", 3), ("q0", "b", 0), ("q0", "c", 2), ("q1", "c", 3), ("q1", "d", 0)]
        )
        out = inject_noise(pools, 1, judg, np.random.default_rng(0))
        # c is judged for q0, so only d can be injected there
        assert out["q0"][2:] == ["d", "d"] or out["q0"][2:] == ["d"] * 2

    def test_replacement_only_after_exhaustion(self):
        pools = {"q0": list("abcdef"), "q1": ["z"]}
        judg = judgments_from(
            [("q0", i, 0) for i in "abcdef"] + [("q1", "z", 3)]
        )
        out = inject_noise(pools, 2, judg, np.random.default_rng(1))
        assert len(out["q1"]) == 3
        assert set(out["q1"][1:]) <= set("abcdef")

    def test_random_scorer_degrades_with_noise(self):
        pools, judg = self._setup(n_queries=8, pool=12)
        def mean_at(h):
            vals = []
            for seed in range(12):
                noisy = inject_noise(pools, h, judg, np.random.default_rng([seed, 31]))
                table = random_scores(noisy, seed)
                overall, _ = mean_ndcg(rank_images(table, noisy), judg)
                vals.append(overall)
            return sum(vals) / len(vals)
        levels = [mean_at(h) for h in (0, 2, 6)]
        assert levels[0] > levels[1] > levels[2]


class TestReports:
    def test_round_trip(self, tmp_path):
        per_query = {"q2": 0.25, "q1": 1 / 3}
        path = tmp_path / "report.tsv"
        write_per_query_report(per_query, 0.5, path, "ndcg25")
        again, overall = read_per_query_report(path)
        assert again == per_query
        assert overall == 0.5

    def test_random_scores_deterministic(self):
        pools = {"q": ["a", "b", "c"]}
        t1 = random_scores(pools, 5)
        t2 = random_scores(pools, 5)
        assert t1.scores == t2.scores
        assert random_scores(pools, 6).scores != t1.scores
