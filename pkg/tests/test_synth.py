import io

import numpy as np
import pytest

from crossmedia.corpus import Normalizer, parse_click_log, preprocess
from crossmedia.errors import ConfigError
from crossmedia.evaluation import spearman
from crossmedia.synth import SynthConfig, generate, write_corpus
from crossmedia.visualness import ConceptVocabulary, visualness

SMALL = SynthConfig(
    clusters=6, queries=50, images=400, vocab_size=60, feature_dim=8,
    embedding_dim=8, seed=11,
)


@pytest.fixture(scope="module")
def small_corpus():
    return generate(SMALL)


class TestGenerate:
    def test_counts(self, small_corpus):
        assert len(small_corpus.features) == SMALL.images
        assert len(small_corpus.queries) == SMALL.queries
        assert len(small_corpus.concept_names) == SMALL.clusters
        assert len(small_corpus.label_predictions) == SMALL.images

    def test_clicked_and_judged_images_have_features(self, small_corpus):
        for _, image_id, _ in small_corpus.click_rows:
            assert image_id in small_corpus.features
        for (_, image_id) in small_corpus.judgments.entries:
            assert image_id in small_corpus.features

    def test_grades_follow_concept_tiers(self, small_corpus):
        by_qid = {q.query_id: q for q in small_corpus.queries}
        for (qid, image_id), grade in small_corpus.judgments.entries.items():
            cluster = small_corpus.image_cluster[image_id]
            q = by_qid[qid]
            if grade == 3:
                assert cluster == q.concepts[0]
            elif grade == 2:
                assert cluster in q.concepts[1:]
            else:
                assert cluster not in q.concepts

    def test_queries_are_normalizer_fixed_points(self, small_corpus):
        norm = Normalizer()
        for q in small_corpus.queries:
            bag = preprocess(q.text, norm)
            assert bag.tokens == tuple(q.text.split())

    def test_planted_visualness_matches_measured(self, small_corpus):
        norm = Normalizer()
        vocab = ConceptVocabulary.from_lines(small_corpus.concept_names, norm)
        for q in small_corpus.queries:
            measured = visualness(preprocess(q.text, norm), vocab).score
            assert measured == pytest.approx(q.visualness)

    def test_clicks_correlate_with_visualness(self, small_corpus):
        norm = Normalizer()
        text = "".join(f"{a}\t{b}\t{c}\n" for a, b, c in small_corpus.click_rows)
        log = parse_click_log(io.StringIO(text), norm)
        vocab = ConceptVocabulary.from_lines(small_corpus.concept_names, norm)
        vis, clicks = [], []
        for key, bag in log.query_bags.items():
            vis.append(visualness(bag, vocab).score)
            clicks.append(float(log.query_clicks(key)))
        assert spearman(vis, clicks) > 0.5

    def test_deterministic(self):
        a = generate(SMALL)
        b = generate(SMALL)
        assert a.click_rows == b.click_rows
        assert np.array_equal(a.features.matrix, b.features.matrix)
        assert a.judgments.entries == b.judgments.entries

    def test_seed_changes_output(self):
        other = generate(SynthConfig(**{**SMALL.__dict__, "seed": 12}))
        assert other.click_rows != generate(SMALL).click_rows

    def test_validation(self):
        with pytest.raises(ConfigError):
            SynthConfig(clusters=0).validate()
        with pytest.raises(ConfigError):
            SynthConfig(clusters=10, embedding_dim=4).validate()
        with pytest.raises(ConfigError):
            SynthConfig(vocab_size=5).validate()


class TestWriteCorpus:
    def test_files_written_and_byte_stable(self, small_corpus, tmp_path):
        d1, d2 = tmp_path / "one", tmp_path / "two"
        p1 = write_corpus(small_corpus, d1)
        p2 = write_corpus(generate(SMALL), d2)
        assert set(p1) == {
            "click_log", "features", "embeddings", "judgments", "concepts",
            "label_predictions",
        }
        for name in p1:
            assert p1[name].read_bytes() == p2[name].read_bytes()
