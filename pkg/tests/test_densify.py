import math
from collections import Counter

import numpy as np
import pytest
import scipy.sparse as sp

from linktopics.anchors import AnchorEntry, build_dictionary
from linktopics.corpus import Article, ExtractedLink
from linktopics.densify import (AdjacencyMatrix, BagOfLinks, ConceptIndex,
                                DensifyError, FactorModel, build_adjacency,
                                densify_article, disambiguate, factorize,
                                load_adjacency, load_factor_model, read_bags,
                                save_adjacency, save_factor_model, score,
                                write_bags)

from conftest import make_linked_article, make_toy_corpus, unique_names


def _article(concept, targets, lang="en"):
    name_of = unique_names(lang)
    return make_linked_article(concept, lang, targets, name_of, mentions=1)


class TestBuildAdjacency:
    def test_rare_target_weight(self):
        # 100 articles, exactly one links to Q2
        articles = [_article("Q1", ["Q2"])]
        articles += [_article(f"Q{i + 3}", []) for i in range(99)]
        A = build_adjacency(articles)
        assert A.n_articles == 100
        i = A.index.get("Q1")
        j = A.index.get("Q2")
        assert A.matrix[i, j] == pytest.approx(-math.log(0.01), abs=1e-12)
        assert A.matrix[i, j] == pytest.approx(4.6052, abs=1e-4)

    def test_universal_target_dropped(self):
        articles = [_article("Q1", ["Q3"]), _article("Q2", ["Q3"])]
        A = build_adjacency(articles)
        # d_j = N = 2 -> weight 0, entry not stored
        assert A.matrix.nnz == 0

    def test_mutual_pair(self):
        articles = [_article("Q1", ["Q2"]), _article("Q2", ["Q1"])]
        A = build_adjacency(articles)
        expected = -math.log(0.5)
        assert A.matrix[A.index.get("Q1"), A.index.get("Q2")] == \
            pytest.approx(expected, abs=1e-12)
        assert A.matrix[A.index.get("Q2"), A.index.get("Q1")] == \
            pytest.approx(expected, abs=1e-12)

    def test_duplicate_links_collapse(self):
        name_of = unique_names("en")
        article = make_linked_article("Q1", "en", ["Q2"], name_of, mentions=1)
        # same link twice via two articles' worth of text is modeled by the
        # binary edge set; duplicate (Q1, Q2) must not change d_j
        twice = Article(concept="Q1", lang="en", title="t",
                        text=article.text + " " + article.text,
                        links=article.links + [
                            ExtractedLink(l.anchor, l.target,
                                          l.start + len(article.text) + 1,
                                          l.end + len(article.text) + 1)
                            for l in article.links])
        other = _article("Q3", [])
        a1 = build_adjacency([article, other])
        a2 = build_adjacency([twice, other])
        assert a1.matrix[a1.index.get("Q1"), a1.index.get("Q2")] == \
            a2.matrix[a2.index.get("Q1"), a2.index.get("Q2")]

    def test_empty_corpus_rejected(self):
        with pytest.raises(DensifyError):
            build_adjacency([])

    def test_target_only_concepts_indexed(self):
        A = build_adjacency([_article("Q1", ["Q5"]), _article("Q2", [])])
        assert A.index.get("Q5") is not None
        assert A.n_articles == 2


def _adjacency_from_dense(dense, n_articles=None):
    m = dense.shape[0]
    index = ConceptIndex(concepts=[f"Q{i + 1}" for i in range(m)])
    return AdjacencyMatrix(lang="en", n_articles=n_articles or m, index=index,
                           matrix=sp.csr_matrix(dense))


class TestFactorize:
    def test_rank1_oracle(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(0.5, 2.0, 20)
        y = rng.uniform(0.5, 2.0, 20)
        dense = np.outer(x, y)  # exact rank-1 target
        A = _adjacency_from_dense(dense)
        model = factorize(A, rank=1, regularization=0.0, iterations=10, seed=0)
        reconstruction = model.U @ model.V.T
        assert np.abs(reconstruction - dense).max() < 1e-6

    def test_full_rank_matches_svd(self):
        rng = np.random.default_rng(7)
        dense = rng.normal(size=(20, 20))
        A = _adjacency_from_dense(dense)
        model = factorize(A, rank=20, regularization=0.0, iterations=10, seed=0)
        als_err = np.linalg.norm(dense - model.U @ model.V.T)
        # oracle: exact truncated SVD at the same rank
        u, s, vt = np.linalg.svd(dense)
        svd_err = np.linalg.norm(dense - (u[:, :20] * s[:20]) @ vt[:20])
        assert (als_err - svd_err) / np.linalg.norm(dense) < 1e-4

    def test_zero_iterations_rejected(self):
        A = _adjacency_from_dense(np.eye(3))
        with pytest.raises(DensifyError):
            factorize(A, rank=1, iterations=0)

    def test_rank_too_large_rejected(self):
        A = _adjacency_from_dense(np.eye(3))
        with pytest.raises(DensifyError):
            factorize(A, rank=4)

    def test_objective_monotone(self):
        rng = np.random.default_rng(3)
        dense = np.abs(rng.normal(size=(15, 15)))
        A = _adjacency_from_dense(dense)
        for loss in ("all", "observed"):
            model = factorize(A, rank=3, regularization=0.1, iterations=8,
                              seed=1, loss=loss)
            history = model.objective_history
            assert all(b <= a * (1 + 1e-9) + 1e-9
                       for a, b in zip(history, history[1:]))

    def test_bit_reproducible(self):
        rng = np.random.default_rng(5)
        dense = np.abs(rng.normal(size=(12, 12)))
        A = _adjacency_from_dense(dense)
        m1 = factorize(A, rank=4, regularization=0.05, iterations=5, seed=9)
        m2 = factorize(A, rank=4, regularization=0.05, iterations=5, seed=9)
        assert np.array_equal(m1.U, m2.U)
        assert np.array_equal(m1.V, m2.V)

    def test_observed_loss_recovers_masked_rank1(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0.5, 2.0, 20)
        y = rng.uniform(0.5, 2.0, 20)
        dense = np.outer(x, y)
        masked = rng.choice(400, size=20, replace=False)
        rows, cols = np.divmod(np.arange(400), 20)
        keep = np.ones(400, dtype=bool)
        keep[masked] = False
        A = AdjacencyMatrix(
            lang="en", n_articles=20,
            index=ConceptIndex(concepts=[f"Q{i + 1}" for i in range(20)]),
            matrix=sp.csr_matrix((dense.flat[keep],
                                  (rows[keep], cols[keep])), shape=(20, 20)))
        model = factorize(A, rank=1, regularization=0.0, iterations=20,
                          seed=0, loss="observed")
        reconstruction = model.U @ model.V.T
        assert np.abs(reconstruction.flat[masked] - dense.flat[masked]).max() \
            < 1e-3


class TestScore:
    def _model(self, U, V, concepts):
        U = np.asarray(U, dtype=float)
        V = np.asarray(V, dtype=float)
        return FactorModel(lang="en", rank=U.shape[1], U=U, V=V,
                           index=ConceptIndex(concepts=concepts), seed=0,
                           regularization=0.0, iterations=1)

    def test_zero_source_vector(self):
        model = self._model([[0, 0], [1, 1]], [[3, 4], [5, 6]], ["Q1", "Q2"])
        assert score(model, "Q1", "Q1") == 0.0
        assert score(model, "Q1", "Q2") == 0.0

    def test_pure(self):
        model = self._model([[1, 2]], [[3, 4]], ["Q1"])
        assert score(model, "Q1", "Q1") == score(model, "Q1", "Q1") == 11.0

    def test_unindexed_is_none(self):
        model = self._model([[1, 2]], [[3, 4]], ["Q1"])
        assert score(model, "Q1", "Q999") is None

    def test_rank1_scores_match_matrix(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(0.5, 2.0, 20)
        y = rng.uniform(0.5, 2.0, 20)
        dense = np.outer(x, y)
        A = _adjacency_from_dense(dense)
        model = factorize(A, rank=1, regularization=0.0, iterations=10, seed=0)
        for i in (0, 7, 19):
            for j in (0, 3, 12):
                assert score(model, f"Q{i + 1}", f"Q{j + 1}") == \
                    pytest.approx(dense[i, j], abs=1e-4)


class TestDisambiguate:
    def _model(self):
        concepts = ["Q1", "Q44", "Q682112", "Q9"]
        U = np.array([[1.0, 0.0], [0, 0], [0, 0], [0, 0]])
        V = np.array([[0.0, 0.0], [0.5, 1.0], [0.5, 1.0], [0.1, 0.0]])
        return FactorModel(lang="en", rank=2, U=U, V=V,
                           index=ConceptIndex(concepts=concepts), seed=0,
                           regularization=0.0, iterations=1)

    def test_single_candidate(self):
        entry = AnchorEntry("p", 10, 1, Counter({"Q9": 1}))
        assert disambiguate(self._model(), "Q1", entry) == "Q9"

    def test_argmax(self):
        entry = AnchorEntry("p", 10, 2, Counter({"Q44": 1, "Q9": 1}))
        # score(Q44) = 0.5, score(Q9) = 0.1
        assert disambiguate(self._model(), "Q1", entry) == "Q44"

    def test_exact_tie_broken_by_count(self):
        # V rows of Q44 and Q682112 are identical: exact score tie
        entry = AnchorEntry("p", 20, 10, Counter({"Q44": 9, "Q682112": 1}))
        assert disambiguate(self._model(), "Q1", entry) == "Q44"
        flipped = AnchorEntry("p", 20, 10, Counter({"Q44": 1, "Q682112": 9}))
        assert disambiguate(self._model(), "Q1", flipped) == "Q682112"

    def test_tie_on_count_breaks_lexicographic(self):
        entry = AnchorEntry("p", 20, 2, Counter({"Q682112": 1, "Q44": 1}))
        assert disambiguate(self._model(), "Q1", entry) == "Q44"

    def test_all_candidates_unindexed(self):
        entry = AnchorEntry("p", 10, 1, Counter({"Q777": 1}))
        assert disambiguate(self._model(), "Q1", entry) is None


def _densify_setup(corpus, lang="aa"):
    dictionary = build_dictionary(corpus, lang)
    A = build_adjacency(corpus)
    model = factorize(A, rank=min(10, len(A.index)), iterations=5, seed=0)
    return dictionary, model


class TestDensifyArticle:
    def test_longest_match_preferred(self):
        # dictionary has "india pale ale", "india", "pale ale"
        ipa = Article(concept="Q10", lang="en", title="ipa",
                      text="india pale ale",
                      links=[ExtractedLink("india pale ale", "Q100", 0, 14)])
        india = Article(concept="Q11", lang="en", title="india",
                        text="india", links=[ExtractedLink("india", "Q101", 0, 5)])
        pale = Article(concept="Q12", lang="en", title="pale ale",
                       text="pale ale",
                       links=[ExtractedLink("pale ale", "Q102", 0, 8)])
        corpus = [ipa, india, pale]
        dictionary = build_dictionary(corpus, "en")
        A = build_adjacency(corpus)
        model = factorize(A, rank=2, iterations=5, seed=0)
        target_article = Article(concept="Q11", lang="en", title="x",
                                 text="india pale ale", links=[])
        bag = densify_article(target_article, dictionary, model)
        assert bag.counts == Counter({"Q100": 1})

    def test_existing_plus_densified_count(self, toy_corpus):
        dictionary, model = _densify_setup(toy_corpus)
        article = toy_corpus[0]
        bag = densify_article(article, dictionary, model)
        # each linked concept is mentioned 3 times, linked once
        for link in article.links:
            assert bag.counts[link.target] == 3
            assert bag.provenance[link.target] == "existing"

    def test_no_matches_keeps_existing_only(self):
        article = Article(concept="Q1", lang="en", title="t",
                          text="zz yy xx",
                          links=[ExtractedLink("zz", "Q2", 0, 2)])
        other = Article(concept="Q2", lang="en", title="u", text="qq",
                        links=[ExtractedLink("qq", "Q1", 0, 2)])
        dictionary = build_dictionary([article, other], "en")
        # dictionary only has zz/qq; remove zz so nothing matches new text
        del dictionary.entries["zz"]
        del dictionary.entries["qq"]
        A = build_adjacency([article, other])
        model = factorize(A, rank=1, iterations=3, seed=0)
        bag = densify_article(article, dictionary, model)
        assert bag.counts == Counter({"Q2": 1})

    def test_bag_superset_of_existing(self, toy_corpus):
        dictionary, model = _densify_setup(toy_corpus)
        for article in toy_corpus[:10]:
            bag = densify_article(article, dictionary, model)
            existing = Counter(l.target for l in article.links)
            for qid, count in existing.items():
                assert bag.counts[qid] >= count

    def test_corpus_ratio_at_least_one(self, toy_corpus):
        dictionary, model = _densify_setup(toy_corpus)
        sparse = sum(len(a.links) for a in toy_corpus)
        dense = sum(densify_article(a, dictionary, model).size
                    for a in toy_corpus)
        assert dense >= sparse

    def test_argmax_invariant_under_rescaling(self, toy_corpus):
        dictionary = build_dictionary(toy_corpus, "aa")
        A = build_adjacency(toy_corpus)
        m1 = factorize(A, rank=8, iterations=5, seed=0)
        # rescaling scores by a positive constant must not change any choice
        m2 = FactorModel(lang=m1.lang, rank=m1.rank, U=m1.U * 3.0, V=m1.V,
                         index=m1.index, seed=m1.seed,
                         regularization=m1.regularization,
                         iterations=m1.iterations)
        for article in toy_corpus[:10]:
            b1 = densify_article(article, dictionary, m1)
            b2 = densify_article(article, dictionary, m2)
            assert b1.counts == b2.counts


class TestSerialization:
    def test_factor_model_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        dense = np.abs(rng.normal(size=(6, 6)))
        A = _adjacency_from_dense(dense)
        model = factorize(A, rank=3, iterations=3, seed=4)
        path = tmp_path / "model.bin"
        save_factor_model(model, path)
        loaded = load_factor_model(path)
        assert loaded.lang == model.lang
        assert loaded.rank == model.rank
        assert loaded.index.concepts == model.index.concepts
        assert np.allclose(loaded.U, model.U, atol=1e-5)
        assert np.allclose(loaded.V, model.V, atol=1e-5)
        assert path.read_bytes()[:4] == b"WPDA"

    def test_adjacency_round_trip(self, tmp_path, toy_corpus):
        A = build_adjacency(toy_corpus)
        path = tmp_path / "adj.bin"
        save_adjacency(A, path)
        loaded = load_adjacency(path)
        assert loaded.lang == A.lang
        assert loaded.n_articles == A.n_articles
        assert loaded.index.concepts == A.index.concepts
        assert (loaded.matrix != A.matrix).nnz == 0

    def test_bags_round_trip(self, tmp_path):
        bag = BagOfLinks(concept="Q1", lang="aa",
                         counts=Counter({"Q2": 3, "Q3": 1}),
                         provenance={"Q2": "existing", "Q3": "densified"})
        path = tmp_path / "bags.jsonl"
        write_bags([bag], path)
        (loaded,) = read_bags(path)
        assert loaded.concept == bag.concept
        assert loaded.counts == bag.counts
        assert loaded.provenance == bag.provenance
