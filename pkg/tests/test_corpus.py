"""Corpus building, encoding round trips, and co-occurrence counting."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topicloop.corpus import (
    build_cooccurrence,
    build_corpus,
    load_bundle,
    load_jsonl,
    load_stopwords,
    save_bundle,
)
from topicloop.errors import DataError, ValidationError

from conftest import make_corpus


def recount_document_frequency(raw_docs):
    """Independent oracle: document frequency per token from raw input."""
    df = {}
    for _, tokens in raw_docs:
        for tok in set(tokens):
            df[tok] = df.get(tok, 0) + 1
    return df


class TestBuildCorpus:
    def test_no_filtering(self):
        corpus = build_corpus([("a", ["x", "y", "x"]), ("b", ["y", "z"])], min_count=1)
        assert len(corpus.vocabulary) == 3
        assert corpus.total_tokens == 5

    def test_min_count_drops_rare_words(self):
        """Oracle: recount document frequencies by hand and refilter.

        df(x)=1, df(y)=2, df(z)=1, so min_count=2 keeps only "y"; both
        documents reduce to ["y"] and two tokens survive.
        """
        raw = [("a", ["x", "y", "x"]), ("b", ["y", "z"])]
        df = recount_document_frequency(raw)
        expected_vocab = sorted(w for w, c in df.items() if c >= 2)
        assert expected_vocab == ["y"]

        corpus = build_corpus(raw, min_count=2)
        assert list(corpus.vocabulary.words) == expected_vocab
        assert corpus.total_tokens == 2
        assert corpus.decode(corpus.documents[0]) == ["y"]
        assert corpus.decode(corpus.documents[1]) == ["y"]

    def test_all_stopwords_is_an_error(self):
        with pytest.raises(DataError, match="empty corpus"):
            build_corpus([("a", ["x", "y"])], stopwords={"x", "y"})

    def test_empty_input_rejected(self):
        with pytest.raises(ValidationError):
            build_corpus([])
        with pytest.raises(ValidationError):
            build_corpus([("a", ["x"])], min_count=0)

    def test_filtered_documents_kept_at_length_zero(self):
        corpus = build_corpus([("a", ["x", "x"]), ("b", ["y"])], stopwords={"y"})
        assert corpus.num_docs == 2
        assert len(corpus.documents[1]) == 0

    def test_first_appearance_order(self):
        corpus = make_corpus([["c", "a"], ["b", "a"]])
        assert list(corpus.vocabulary.words) == ["c", "a", "b"]
        assert corpus.vocabulary.index_of == {"c": 0, "a": 1, "b": 2}

    def test_doc_frequency_invariant(self, toy_corpus):
        # every retained word occurs in at least one document
        assert min(toy_corpus.vocabulary.doc_frequency) >= 1

    def test_rebuild_is_identical(self):
        raw = [("a", ["x", "y", "x", "q"]), ("b", ["y", "z", "q"])]
        first = build_corpus(raw, min_count=1)
        second = build_corpus(raw, min_count=1)
        assert first.vocabulary.words == second.vocabulary.words
        for d1, d2 in zip(first.documents, second.documents):
            assert np.array_equal(d1.tokens, d2.tokens)

    @given(
        st.lists(
            st.lists(st.sampled_from("abcdefg"), min_size=0, max_size=8),
            min_size=1,
            max_size=6,
        )
    )
    @settings(max_examples=60)
    def test_round_trip_decoding(self, docs):
        raw = [(str(i), tokens) for i, tokens in enumerate(docs)]
        if not any(tokens for _, tokens in raw):
            return
        corpus = build_corpus(raw, min_count=1)
        for (_, tokens), doc in zip(raw, corpus.documents):
            assert corpus.decode(doc) == tokens


class TestCooccurrence:
    def test_two_doc_counts(self):
        """Oracle: enumerate the two documents by hand."""
        corpus = make_corpus([["x", "y"], ["y", "z"]])
        index = build_cooccurrence(corpus)
        w = corpus.vocabulary.index_of
        assert index.single(w["y"]) == 2
        assert index.pair(w["x"], w["y"]) == 1
        assert index.pair(w["x"], w["z"]) == 0

    def test_single_doc_has_no_pairs(self):
        corpus = make_corpus([["x"]])
        index = build_cooccurrence(corpus)
        assert index.pair_counts == {}
        assert index.single(0) == 1

    def test_repeats_count_once(self):
        corpus = make_corpus([["x"] * 5, ["x", "y"]])
        index = build_cooccurrence(corpus)
        w = corpus.vocabulary.index_of
        assert index.single(w["x"]) == 2
        assert index.pair(w["x"], w["y"]) == 1

    def test_no_self_pairs_stored(self, toy_index):
        for i, j in toy_index.pair_counts:
            assert i < j
        with pytest.raises(ValidationError):
            toy_index.pair(0, 0)

    def test_pair_bounded_by_marginals(self, toy_index):
        for (i, j), count in toy_index.pair_counts.items():
            assert count <= min(toy_index.single(i), toy_index.single(j))

    def test_symmetric_access(self, toy_index):
        for (i, j), count in toy_index.pair_counts.items():
            assert toy_index.pair(j, i) == count

    def test_single_counts_match_doc_frequency(self, toy_corpus, toy_index):
        assert toy_index.single_counts.tolist() == list(toy_corpus.vocabulary.doc_frequency)

    def test_dense_and_sparse_paths_agree(self, toy_corpus, monkeypatch):
        import topicloop.corpus as corpus_mod

        dense = build_cooccurrence(toy_corpus)
        monkeypatch.setattr(corpus_mod, "_DENSE_PAIR_LIMIT", 0)
        sparse = build_cooccurrence(toy_corpus)
        assert dense.pair_counts == sparse.pair_counts
        assert np.array_equal(dense.single_counts, sparse.single_counts)


class TestFileInterfaces:
    def test_load_jsonl(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        path.write_text(
            '{"id": "a", "tokens": ["x", "y"]}\n{"id": "b", "tokens": []}\n', "utf-8"
        )
        docs = load_jsonl(str(path))
        assert docs == [("a", ["x", "y"]), ("b", [])]

    def test_load_jsonl_reports_line_number(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        path.write_text('{"id": "a", "tokens": ["x"]}\nnot json\n', "utf-8")
        with pytest.raises(DataError, match="line 2"):
            load_jsonl(str(path))

    def test_load_jsonl_validates_shape(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        path.write_text('{"id": "a", "tokens": [1, 2]}\n', "utf-8")
        with pytest.raises(DataError, match="line 1"):
            load_jsonl(str(path))

    def test_load_stopwords(self, tmp_path):
        path = tmp_path / "stop.txt"
        path.write_text("the\n\nof\n", "utf-8")
        assert load_stopwords(str(path)) == frozenset({"the", "of"})

    def test_bundle_round_trip(self, tmp_path, toy_corpus):
        path = tmp_path / "bundle.json"
        save_bundle(toy_corpus, str(path))
        loaded = load_bundle(str(path))
        assert loaded.vocabulary.words == toy_corpus.vocabulary.words
        assert loaded.total_tokens == toy_corpus.total_tokens
        for a, b in zip(loaded.documents, toy_corpus.documents):
            assert a.id == b.id
            assert np.array_equal(a.tokens, b.tokens)

    def test_rebuilt_bundle_is_byte_identical(self, tmp_path):
        raw = [("a", ["x", "y", "x"]), ("b", ["y", "z"])]
        paths = [tmp_path / "one.json", tmp_path / "two.json"]
        for path in paths:
            save_bundle(build_corpus(raw, min_count=1), str(path))
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_bundle_rejects_foreign_json(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"hello": 1}), "utf-8")
        with pytest.raises(DataError):
            load_bundle(str(path))
