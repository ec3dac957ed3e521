import math

import numpy as np
import pytest

from retag.classifier import (
    ClassifierConfig,
    FixedVocabulary,
    TemplateSet,
    build_fixed_vocabulary,
    classify,
    classify_fixed_vocabulary,
    ensemble_text_embedding,
    score_candidates,
    softmax,
)
from retag.candidates import FilterConfig
from retag.embeddings import l2_normalize, mean_embedding
from retag.errors import EmptyCandidatesError, NoCandidatesError
from retag.store import build_index, store_from_texts


def softmax_oracle(values):
    exps = [math.exp(v) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


class TestEnsembleTextEmbedding:
    def test_single_template(self, mock):
        tset = TemplateSet(("a photo of a {}",))
        out = ensemble_text_embedding("cat", tset, mock)
        direct = mock.embed_texts("joint-text", ["a photo of a cat"])[0]
        assert np.allclose(out, l2_normalize(direct), atol=1e-6)

    def test_equal_templates(self, mock):
        tset = TemplateSet(("a photo of a {}", "a photo of a {}"))
        single = ensemble_text_embedding("cat", TemplateSet(("a photo of a {}",)), mock)
        double = ensemble_text_embedding("cat", tset, mock)
        assert np.allclose(single, double, atol=1e-6)

    def test_orthogonal_pair_matches_mean_normalize_oracle(self):
        class TwoPromptProvider:
            def embed_texts(self, role, texts):
                rows = []
                for t in texts:
                    if t.startswith("first"):
                        rows.append([1.0, 0.0, 0.0, 0.0])
                    else:
                        rows.append([0.0, 1.0, 0.0, 0.0])
                return np.array(rows, dtype=np.float32)

        tset = TemplateSet(("first {}", "second {}"))
        out = ensemble_text_embedding("x", tset, TwoPromptProvider())
        oracle = l2_normalize(mean_embedding([[1, 0, 0, 0], [0, 1, 0, 0]]))
        assert np.allclose(out, oracle, atol=1e-6)
        assert np.allclose(out[:2], [math.sqrt(0.5), math.sqrt(0.5)], atol=1e-6)

    def test_template_validation(self):
        with pytest.raises(ValueError):
            TemplateSet(("no placeholder",))
        with pytest.raises(ValueError):
            TemplateSet(("{} and {}",))
        with pytest.raises(ValueError):
            TemplateSet(())

    def test_templates_from_file(self, tmp_path):
        path = tmp_path / "templates.txt"
        path.write_text("# comment\na photo of a {}\na sketch of a {}\n\n")
        tset = TemplateSet.from_file(path)
        assert tset.templates == ("a photo of a {}", "a sketch of a {}")

    def test_shipped_ensemble_file_parses(self):
        from importlib import resources

        path = resources.files("retag").joinpath("data", "templates_ensemble.txt")
        tset = TemplateSet.from_file(path)
        assert len(tset.templates) >= 5
        assert all(t.count("{}") == 1 for t in tset.templates)


class TestScoreCandidates:
    def test_singleton_scores_one(self):
        image = np.array([1.0, 0.0], dtype=np.float32)
        cand = np.array([0.6, 0.8], dtype=np.float32)
        for alpha in (0.0, 0.3, 1.0):
            (_, _, s), = score_candidates(image, [cand], image, alpha)
            assert s == pytest.approx(1.0)

    def test_worked_two_candidate_example(self):
        # Visual cosines (0.2, 0.1), textual cosines (0.1, 0.3), alpha 0.7.
        sv = softmax_oracle([0.2, 0.1])
        st_ = softmax_oracle([0.1, 0.3])
        expected = [0.7 * sv[i] + 0.3 * st_[i] for i in range(2)]
        assert expected[0] == pytest.approx(0.5025, abs=1e-3)
        assert expected[1] == pytest.approx(0.4975, abs=1e-3)

        image = np.array([1.0, 0.0, 0.0], dtype=np.float32)
        centroid = np.array([0.0, 1.0, 0.0], dtype=np.float32)

        def cand(sv_, st2):
            rest = math.sqrt(max(0.0, 1.0 - sv_ * sv_ - st2 * st2))
            return np.array([sv_, st2, rest], dtype=np.float32)

        triples = score_candidates(image, [cand(0.2, 0.1), cand(0.1, 0.3)], centroid, 0.7)
        assert triples[0][0] == pytest.approx(0.2, abs=1e-6)
        assert triples[0][1] == pytest.approx(0.1, abs=1e-6)
        assert triples[0][2] == pytest.approx(expected[0], abs=1e-3)
        assert triples[1][2] == pytest.approx(expected[1], abs=1e-3)
        assert triples[0][2] > triples[1][2]

    def test_alpha_endpoints(self):
        rng = np.random.default_rng(0)
        image = l2_normalize(rng.standard_normal(8))
        centroid = l2_normalize(rng.standard_normal(8))
        cands = [l2_normalize(rng.standard_normal(8)) for _ in range(12)]
        at_one = score_candidates(image, cands, centroid, 1.0)
        at_zero = score_candidates(image, cands, centroid, 0.0)
        sv = [t[0] for t in at_one]
        st_ = [t[1] for t in at_zero]
        assert int(np.argmax([t[2] for t in at_one])) == int(np.argmax(sv))
        assert int(np.argmax([t[2] for t in at_zero])) == int(np.argmax(st_))

    def test_modality_softmax_sums_to_one(self):
        rng = np.random.default_rng(1)
        image = l2_normalize(rng.standard_normal(6))
        centroid = l2_normalize(rng.standard_normal(6))
        cands = [l2_normalize(rng.standard_normal(6)) for _ in range(9)]
        triples = score_candidates(image, cands, centroid, 0.7)
        assert sum(softmax([t[0] for t in triples])) == pytest.approx(1.0, abs=1e-9)
        assert sum(softmax([t[1] for t in triples])) == pytest.approx(1.0, abs=1e-9)
        assert sum(t[2] for t in triples) == pytest.approx(1.0, abs=1e-9)
        assert all(0.0 <= t[2] <= 1.0 for t in triples)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(2)
        values = rng.standard_normal(10)
        assert np.allclose(softmax(values), softmax(values + 123.456), atol=1e-12)

    def test_empty_candidates(self):
        with pytest.raises(EmptyCandidatesError):
            score_candidates(np.ones(3), [], np.ones(3), 0.5)


class TestClassify:
    def test_uniform_captions_single_candidate(self, mock):
        texts = ["a photo of a cat"] * 10
        embs = mock.embed_texts("joint-text", texts)
        index = build_index(store_from_texts(texts, embs))
        q = mock.planted_vector("cat", "img", role="joint-image")
        pred = classify(q, index, provider=mock)
        assert pred.top == "cat"

    def test_two_cluster_recovery(self, mock, cat_dog_index):
        for i in range(10):
            q = mock.planted_vector("cat", f"cat-img-{i}", role="joint-image")
            assert classify(q, cat_dog_index, provider=mock).top == "cat"
            q = mock.planted_vector("dog", f"dog-img-{i}", role="joint-image")
            assert classify(q, cat_dog_index, provider=mock).top == "dog"

    def test_alpha_one_follows_visual_preference(self):
        # Construct geometry by hand: retrieval returns one caption whose
        # words are "cat" and "dog"; the image embedding is closer to the
        # candidate embedding of "dog", so alpha=1 must pick "dog" even
        # though the caption centroid sits closer to "cat".
        dim = 4
        cat_vec = np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)
        dog_vec = np.array([0.0, 1.0, 0.0, 0.0], dtype=np.float32)

        class GeometryProvider:
            def embed_texts(self, role, texts):
                rows = []
                for t in texts:
                    if "dog" in t:
                        rows.append(dog_vec)
                    elif "cat" in t:
                        rows.append(cat_vec)
                    else:
                        rows.append(np.array([0, 0, 1, 0], dtype=np.float32))
                return np.stack(rows)

        caption = "cat dog"
        caption_emb = l2_normalize(cat_vec + 0.8 * dog_vec)  # closer to cat
        index = build_index(store_from_texts([caption], caption_emb[None, :]))
        image = l2_normalize(0.2 * cat_vec + 1.0 * dog_vec)  # closer to dog

        cfg = ClassifierConfig(
            alpha=1.0, k=1, filter=FilterConfig(min_occurrences=1)
        )
        pred = classify(image, index, cfg, GeometryProvider())
        assert pred.top == "dog"

        cfg0 = ClassifierConfig(alpha=0.0, k=1, filter=FilterConfig(min_occurrences=1))
        pred0 = classify(image, index, cfg0, GeometryProvider())
        assert pred0.top == "cat"

    def test_prediction_determinism(self, mock, cat_dog_index):
        q = mock.planted_vector("cat", "repeat", role="joint-image")
        a = classify(q, cat_dog_index, provider=mock)
        b = classify(q, cat_dog_index, provider=mock)
        assert a.to_json() == b.to_json()
        assert a.to_json().encode() == b.to_json().encode()

    def test_single_template_variant_identical(self, mock, cat_dog_index):
        q = mock.planted_vector("dog", "same", role="joint-image")
        base_cfg = ClassifierConfig()
        ens_cfg = ClassifierConfig(templates=TemplateSet(("a photo of a {}",)))
        a = classify(q, cat_dog_index, base_cfg, mock)
        b = classify(q, cat_dog_index, ens_cfg, mock)
        assert a.to_json() == b.to_json()

    def test_multi_template_runs(self, mock, cat_dog_index):
        cfg = ClassifierConfig(
            templates=TemplateSet(("a photo of a {}", "an image of the {}", "{} outdoors"))
        )
        q = mock.planted_vector("cat", "multi", role="joint-image")
        assert classify(q, cat_dog_index, cfg, mock).top == "cat"

    def test_fallback_to_closest_caption_words(self, mock):
        # Every word is unique across captions, so the min-occurrence filter
        # wipes the candidate set; the fallback replays the closest caption.
        texts = [
            "a solitary cassowary strolls",
            "unrelated weather report",
            "chairs everywhere today",
        ]
        embs = mock.embed_texts("joint-text", texts)
        index = build_index(store_from_texts(texts, embs))
        q = embs[0]
        pred = classify(q, index, provider=mock)
        assert pred.top in {"cassowary", "solitary", "stroll"}
        assert pred.retrieved_caption_ids[0] == 0

    def test_no_candidates_error(self, mock):
        texts = ["of at my", "it to an"]
        embs = mock.embed_texts("joint-text", texts)
        index = build_index(store_from_texts(texts, embs))
        with pytest.raises(NoCandidatesError):
            classify(embs[0], index, provider=mock)

    def test_ranked_scores_in_unit_interval(self, mock, cat_dog_index):
        q = mock.planted_vector("cat", "unit", role="joint-image")
        pred = classify(q, cat_dog_index, provider=mock)
        for cand in pred.ranked:
            assert 0.0 <= cand.score <= 1.0
        total = sum(c.score for c in pred.ranked)
        assert total == pytest.approx(1.0, abs=1e-9)


class TestFixedVocabulary:
    def test_single_name(self, mock):
        vocab = build_fixed_vocabulary(["cat"], TemplateSet(), mock)
        q = mock.planted_vector("dog", "whatever", role="joint-image")
        assert classify_fixed_vocabulary(q, vocab) == "cat"

    def test_self_match(self, mock):
        vocab = build_fixed_vocabulary(["cat", "dog", "tree"], TemplateSet(), mock)
        assert classify_fixed_vocabulary(vocab.embeddings[1], vocab) == "dog"

    def test_tie_breaks_lexicographically(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.0]], dtype=np.float32)
        vocab = FixedVocabulary(names=["zebra", "ant"], embeddings=emb)
        assert classify_fixed_vocabulary(np.array([1.0, 0.0]), vocab) == "ant"

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            FixedVocabulary(names=["a", "a"], embeddings=np.eye(2, dtype=np.float32))


def test_candidate_cache_reused(mock, cat_dog_index):
    calls = []
    original = mock.embed_texts

    def counting(role, texts):
        calls.append(len(texts))
        return original(role, texts)

    mock.embed_texts = counting
    cache = {}
    q1 = mock.planted_vector("cat", "c1", role="joint-image")
    q2 = mock.planted_vector("cat", "c2", role="joint-image")
    classify(q1, cat_dog_index, provider=mock, cache=cache)
    before = sum(calls)
    classify(q2, cat_dog_index, provider=mock, cache=cache)
    # Second call embeds no (or strictly fewer) new candidates.
    assert sum(calls) - before <= before
    assert cache
