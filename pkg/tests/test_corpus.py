"""Corpus ingestion: tokenization rules, filtering, splits, serialization."""

import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdm.corpus import (
    BowDocument,
    PreprocessConfig,
    build_corpus,
    corpus_from_lines,
    load_corpus,
    save_corpus,
    split_holdout,
    tokenize,
)
from fdm.errors import EmptyCorpus


class TestTokenize:
    def test_basic_rules(self):
        cfg = PreprocessConfig(min_token_len=3, stopwords=frozenset({"the"}))
        assert tokenize("The GPU runs fast!", cfg) == ["gpu", "runs", "fast"]

    def test_all_below_min_length(self):
        assert tokenize("a b", PreprocessConfig(min_token_len=3)) == []

    def test_case_folding(self):
        assert tokenize("Topic topic TOPIC") == ["topic", "topic", "topic"]

    def test_numbers_and_non_ascii_stripped(self):
        assert tokenize("word123word café " ) == ["word", "word", "caf"]

    def test_stemming_flag(self):
        cfg = PreprocessConfig(stem=True)
        assert tokenize("running caresses", cfg) == ["run", "caress"]

    def test_digits_kept_for_synthetic_names(self):
        cfg = PreprocessConfig(keep_digits=True)
        assert tokenize("t0001 t0002", cfg) == ["t0001", "t0002"]


class TestBuildCorpus:
    def test_rare_token_removed(self):
        streams = [["common", "rare"], ["common", "common"], ["common", "other", "other"]]
        corpus = build_corpus(streams, min_token_count=2)
        assert "rare" not in corpus.vocab
        assert "common" in corpus.vocab

    def test_short_doc_dropped(self):
        streams = [["keep", "keep"], ["keep", "gone"]]
        corpus = build_corpus(streams, min_token_count=2)
        # second doc reduces to one token after "gone" is filtered
        assert corpus.n_docs == 1

    def test_exact_counts(self):
        corpus = build_corpus([["a", "a", "b"], ["b", "c"]], min_doc_len=2)
        assert corpus.n_tokens == 3
        assert corpus.n_docs == 2
        a, b = corpus.vocab.id("a"), corpus.vocab.id("b")
        assert corpus.docs[0].counts == {a: 2, b: 1}
        assert corpus.docs[0].length == 3

    def test_empty_corpus_raises(self):
        with pytest.raises(EmptyCorpus):
            build_corpus([["x"], ["y"]], min_doc_len=2)

    def test_min_doc_len_floor(self):
        with pytest.raises(ValueError):
            build_corpus([["a", "b"]], min_doc_len=1)

    def test_drop_top_k(self):
        streams = [["top", "top", "top", "mid", "mid", "low"]] * 2
        corpus = build_corpus(streams, drop_top_k=1)
        assert "top" not in corpus.vocab
        assert "mid" in corpus.vocab

    def test_frequency_threshold_by_recount(self):
        rng = np.random.default_rng(7)
        streams = [
            [f"w{rng.integers(0, 30)}" for _ in range(rng.integers(2, 30))]
            for _ in range(40)
        ]
        min_count = 3
        corpus = build_corpus(streams, min_token_count=min_count)
        recount = collections.Counter(t for s in streams for t in s)
        for tok in corpus.vocab.tokens:
            assert recount[tok] >= min_count


class TestSplitHoldout:
    def _corpus(self, n):
        return build_corpus([[f"t{i}", f"t{i}"] for i in range(n)], min_token_count=1)

    def test_sizes_and_disjoint(self):
        corpus = self._corpus(10)
        train, test = split_holdout(corpus, 0.2, seed=1)
        assert test.n_docs == 2
        assert train.n_docs == 8

    def test_deterministic(self):
        corpus = self._corpus(20)
        a = split_holdout(corpus, 0.3, seed=5)
        b = split_holdout(corpus, 0.3, seed=5)
        assert [d.counts for d in a[0].docs] == [d.counts for d in b[0].docs]
        assert [d.counts for d in a[1].docs] == [d.counts for d in b[1].docs]

    def test_partition_multiset(self):
        corpus = self._corpus(100)
        train, test = split_holdout(corpus, 0.5, seed=9)
        original = sorted(tuple(sorted(d.counts.items())) for d in corpus.docs)
        combined = sorted(
            tuple(sorted(d.counts.items())) for d in train.docs + test.docs
        )
        assert combined == original

    def test_fraction_validated(self):
        corpus = self._corpus(4)
        with pytest.raises(ValueError):
            split_holdout(corpus, 0.0, seed=0)
        with pytest.raises(ValueError):
            split_holdout(corpus, 1.0, seed=0)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        corpus = corpus_from_lines(
            ["the cat sat on the mat", "the dog ate the cat food", "cat cat dog"],
            config=PreprocessConfig(min_token_len=3),
        )
        path = tmp_path / "c.corpus"
        save_corpus(str(path), corpus)
        loaded = load_corpus(str(path))
        assert loaded.vocab.tokens == corpus.vocab.tokens
        assert [d.counts for d in loaded.docs] == [d.counts for d in corpus.docs]
        assert [d.length for d in loaded.docs] == [d.length for d in corpus.docs]


@given(
    st.lists(
        st.lists(st.integers(0, 20), min_size=2, max_size=40),
        min_size=1,
        max_size=10,
    )
)
@settings(max_examples=50, deadline=None)
def test_doc_length_is_count_sum(id_lists):
    for ids in id_lists:
        doc = BowDocument.from_ids(ids)
        assert doc.length == sum(doc.counts.values()) == len(ids)
        assert all(c >= 1 for c in doc.counts.values())
