"""Gibbs sampler: count bookkeeping, the full conditional, and determinism."""

import numpy as np
import pytest

from topicloop.corpus import Corpus, Document, Vocabulary
from topicloop.errors import DataError, ValidationError
from topicloop.initializers import random_init
from topicloop.sampler import (
    Hyperparams,
    TopicModel,
    conditional_distribution,
    estimate,
    gibbs_pass,
    init_state,
    load_checkpoint,
    save_checkpoint,
    top_words,
)

from conftest import brute_force_counts, make_corpus


def assert_count_invariants(state):
    """The three conservation identities plus a recount from z."""
    assert np.array_equal(state.n_wt.sum(axis=0), state.n_t)
    assert np.array_equal(state.n_td.sum(axis=1), state.corpus.doc_lengths)
    assert state.n_t.sum() == state.corpus.total_tokens
    n_wt, n_td, n_t = brute_force_counts(state.corpus, state.z, state.hyper.num_topics)
    assert np.array_equal(state.n_wt, n_wt)
    assert np.array_equal(state.n_td, n_td)
    assert np.array_equal(state.n_t, n_t)


def brute_conditional(corpus, z, hyper, doc, pos):
    """Direct evaluation of the collapsed conditional from a fresh recount.

    Counts are rebuilt from scratch with the (doc, pos) token excluded, then
    the two-factor formula is evaluated and normalized.
    """
    num_topics = hyper.num_topics
    vocab_size = len(corpus.vocabulary)
    beta = hyper.beta
    alpha = hyper.alpha
    w = int(corpus.documents[doc].tokens[pos])

    n_wt = np.zeros((vocab_size, num_topics))
    n_td = np.zeros((corpus.num_docs, num_topics))
    n_t = np.zeros(num_topics)
    for d, document in enumerate(corpus.documents):
        for i in range(len(document)):
            if d == doc and i == pos:
                continue
            n_wt[int(document.tokens[i]), int(z[d][i])] += 1
            n_td[d, int(z[d][i])] += 1
            n_t[int(z[d][i])] += 1

    doc_len = len(corpus.documents[doc])
    weights = np.empty(num_topics)
    for t in range(num_topics):
        weights[t] = (
            (n_wt[w, t] + beta) / (n_t[t] + vocab_size * beta)
            * (n_td[doc, t] + alpha) / (doc_len - 1 + num_topics * alpha)
        )
    return weights / weights.sum()


class TestHyperparams:
    def test_auto_eta_is_one_over_topics(self):
        assert Hyperparams(num_topics=4).beta == 0.25
        assert Hyperparams(num_topics=4).eta_mode == "auto"

    def test_explicit_eta(self):
        hyper = Hyperparams(num_topics=4, eta=0.1)
        assert hyper.beta == 0.1
        assert hyper.eta_mode == "0.1"

    def test_validation(self):
        with pytest.raises(ValidationError):
            Hyperparams(num_topics=0)
        with pytest.raises(ValidationError):
            Hyperparams(num_topics=2, alpha=0.0)
        with pytest.raises(ValidationError):
            Hyperparams(num_topics=2, eta=-0.1)


class TestInitState:
    def test_single_doc_single_topic_counts(self):
        corpus = make_corpus([["a", "b", "a"]])
        state = init_state(corpus, [np.zeros(3, int)], Hyperparams(num_topics=2), 0)
        assert state.n_td[0].tolist() == [3, 0]
        assert state.n_t.tolist() == [3, 0]
        assert state.n_wt[:, 0].sum() == 3

    def test_all_empty_documents_give_zero_counts(self):
        vocab = Vocabulary(words=("x",), index_of={"x": 0}, doc_frequency=(1,))
        corpus = Corpus(
            vocabulary=vocab,
            documents=(
                Document("a", np.empty(0, np.int64)),
                Document("b", np.empty(0, np.int64)),
            ),
            total_tokens=0,
        )
        state = init_state(
            corpus, [np.empty(0, int), np.empty(0, int)], Hyperparams(num_topics=2), 0
        )
        assert state.n_wt.sum() == 0
        assert state.n_td.sum() == 0
        assert state.n_t.sum() == 0

    def test_random_assignments_match_recount_oracle(self, toy_corpus):
        assignments = random_init(toy_corpus, 3, seed=5)
        state = init_state(toy_corpus, assignments, Hyperparams(num_topics=3), 5)
        assert_count_invariants(state)

    def test_shape_mismatch_names_document(self, toy_corpus):
        assignments = random_init(toy_corpus, 2, seed=0)
        assignments[1] = assignments[1][:-1]
        with pytest.raises(ValidationError, match="d1"):
            init_state(toy_corpus, assignments, Hyperparams(num_topics=2), 0)

    def test_bad_label_names_document_and_position(self, toy_corpus):
        assignments = random_init(toy_corpus, 2, seed=0)
        assignments[2][1] = 9
        with pytest.raises(ValidationError, match=r"d2.*position 1"):
            init_state(toy_corpus, assignments, Hyperparams(num_topics=2), 0)

    def test_label_permutation_equivariance(self, toy_corpus):
        """Permuting input labels permutes the count columns identically."""
        perm = [2, 0, 1]
        assignments = random_init(toy_corpus, 3, seed=9)
        permuted = [np.array([perm[t] for t in doc]) for doc in assignments]
        base = init_state(toy_corpus, assignments, Hyperparams(num_topics=3), 0)
        swapped = init_state(toy_corpus, permuted, Hyperparams(num_topics=3), 0)
        for t in range(3):
            assert np.array_equal(base.n_wt[:, t], swapped.n_wt[:, perm[t]])
            assert np.array_equal(base.n_td[:, t], swapped.n_td[:, perm[t]])
            assert base.n_t[t] == swapped.n_t[perm[t]]

    def test_negative_seed_rejected(self, toy_corpus):
        assignments = random_init(toy_corpus, 2, seed=0)
        with pytest.raises(ValidationError):
            init_state(toy_corpus, assignments, Hyperparams(num_topics=2), -1)


class TestConditionalDistribution:
    def test_single_topic(self):
        corpus = make_corpus([["a", "b"]])
        state = init_state(corpus, [np.zeros(2, int)], Hyperparams(num_topics=1), 0)
        assert conditional_distribution(state, 0, 0).tolist() == [1.0]

    def test_symmetric_counts_give_half_half(self):
        corpus = make_corpus([["w", "w", "w"]])
        state = init_state(corpus, [np.array([0, 1, 0])], Hyperparams(num_topics=2, alpha=0.3, eta=0.7), 0)
        probs = conditional_distribution(state, 0, 2)
        assert probs.tolist() == [0.5, 0.5]

    def test_matches_hand_evaluation(self):
        """Oracle: independent recount plus direct formula evaluation."""
        corpus = make_corpus([["a", "b", "a"], ["b", "a"]])
        hyper = Hyperparams(num_topics=2, alpha=0.1, eta=0.2)
        z = [np.array([0, 1, 1]), np.array([1, 0])]
        state = init_state(corpus, z, hyper, 0)
        for d in range(corpus.num_docs):
            for pos in range(len(corpus.documents[d])):
                expected = brute_conditional(corpus, z, hyper, d, pos)
                actual = conditional_distribution(state, d, pos)
                assert np.max(np.abs(actual - expected)) <= 1e-12

    def test_normalization(self, toy_corpus):
        state = init_state(
            toy_corpus, random_init(toy_corpus, 4, 3), Hyperparams(num_topics=4), 3
        )
        for d in range(toy_corpus.num_docs):
            for pos in range(len(toy_corpus.documents[d])):
                probs = conditional_distribution(state, d, pos)
                assert np.all(probs >= 0)
                assert abs(probs.sum() - 1.0) <= 1e-12

    def test_out_of_range_indices(self, toy_corpus):
        state = init_state(
            toy_corpus, random_init(toy_corpus, 2, 0), Hyperparams(num_topics=2), 0
        )
        with pytest.raises(ValidationError):
            conditional_distribution(state, 99, 0)
        with pytest.raises(ValidationError):
            conditional_distribution(state, 0, 99)


class TestGibbsPass:
    def test_single_topic_is_a_count_noop(self):
        corpus = make_corpus([["a", "b", "a"]])
        state = init_state(corpus, [np.zeros(3, int)], Hyperparams(num_topics=1), 0)
        before = state.n_wt.copy()
        gibbs_pass(state)
        assert np.array_equal(state.n_wt, before)
        assert state.pass_count == 1

    def test_fixed_seed_reproduces_labels(self, toy_corpus):
        def run():
            assignments = random_init(toy_corpus, 3, seed=1)
            state = init_state(toy_corpus, assignments, Hyperparams(num_topics=3), seed=42)
            for _ in range(3):
                gibbs_pass(state)
            return state

        first, second = run(), run()
        for a, b in zip(first.z, second.z):
            assert np.array_equal(a, b)
        assert np.array_equal(first.n_wt, second.n_wt)

    def test_invariants_hold_after_passes(self, toy_corpus):
        state = init_state(
            toy_corpus, random_init(toy_corpus, 3, 2), Hyperparams(num_topics=3), 7
        )
        for _ in range(5):
            gibbs_pass(state)
            assert_count_invariants(state)

    def test_matches_reference_sweep(self):
        """Oracle: a slow sweep driven by conditional_distribution and the
        same per-pass uniform stream must reproduce the fast loop's labels."""
        corpus = make_corpus(
            [["a", "b", "c", "a"], ["b", "c", "d"], ["d", "a", "d", "c", "b"]]
        )
        hyper = Hyperparams(num_topics=3, alpha=0.2, eta=0.15)
        fast = init_state(corpus, random_init(corpus, 3, 0), hyper, seed=11)
        slow = init_state(corpus, random_init(corpus, 3, 0), hyper, seed=11)

        for _ in range(4):
            uniforms = np.random.default_rng([slow.rng_seed, slow.pass_count]).random(
                corpus.total_tokens
            )
            k = 0
            for d in range(corpus.num_docs):
                for pos in range(len(corpus.documents[d])):
                    probs = conditional_distribution(slow, d, pos)
                    new_topic = int(np.searchsorted(np.cumsum(probs), uniforms[k], side="right"))
                    new_topic = min(new_topic, hyper.num_topics - 1)
                    old_topic = int(slow.z[d][pos])
                    w = int(corpus.documents[d].tokens[pos])
                    slow.z[d][pos] = new_topic
                    slow.n_wt[w, old_topic] -= 1
                    slow.n_td[d, old_topic] -= 1
                    slow.n_t[old_topic] -= 1
                    slow.n_wt[w, new_topic] += 1
                    slow.n_td[d, new_topic] += 1
                    slow.n_t[new_topic] += 1
                    k += 1
            slow.pass_count += 1
            gibbs_pass(fast)
            for a, b in zip(fast.z, slow.z):
                assert np.array_equal(a, b)


class TestEstimate:
    def test_prior_only_theta(self):
        vocab = Vocabulary(words=("x",), index_of={"x": 0}, doc_frequency=(1,))
        corpus = Corpus(
            vocabulary=vocab,
            documents=(Document("a", np.empty(0, np.int64)),),
            total_tokens=0,
        )
        state = init_state(
            corpus, [np.empty(0, int)], Hyperparams(num_topics=2, alpha=1.0), 0
        )
        model = estimate(state)
        assert model.theta[0].tolist() == [0.5, 0.5]

    def test_hand_evaluated_theta(self):
        corpus = make_corpus([["a", "b", "a"]])
        state = init_state(
            corpus, [np.zeros(3, int)], Hyperparams(num_topics=2, alpha=0.1), 0
        )
        model = estimate(state)
        assert model.theta[0] == pytest.approx([3.1 / 3.2, 0.1 / 3.2], abs=1e-12)

    def test_rows_are_distributions(self, toy_corpus):
        state = init_state(
            toy_corpus, random_init(toy_corpus, 3, 4), Hyperparams(num_topics=3, eta=0.1), 4
        )
        model = estimate(state)
        assert np.allclose(model.theta.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(model.theta >= 0)
        assert np.all(model.phi >= 0)


class TestTopWords:
    def test_one_hot_topic(self):
        phi = np.zeros((1, 10))
        phi[0, 7] = 1.0
        model = TopicModel(
            theta=np.ones((1, 1)), phi=phi,
            vocabulary=tuple(f"w{i}" for i in range(10)),
        )
        assert top_words(model, 0, 1) == ["w7"]

    def test_uniform_ties_break_by_index(self):
        model = TopicModel(
            theta=np.ones((1, 1)), phi=np.full((1, 5), 0.2),
            vocabulary=("v0", "v1", "v2", "v3", "v4"),
        )
        assert top_words(model, 0, 3) == ["v0", "v1", "v2"]

    def test_bad_arguments(self):
        model = TopicModel(
            theta=np.ones((1, 1)), phi=np.full((1, 2), 0.5), vocabulary=("a", "b")
        )
        with pytest.raises(ValidationError):
            top_words(model, 5, 1)
        with pytest.raises(ValidationError):
            top_words(model, 0, 0)


class TestCheckpoint:
    def test_round_trip_preserves_chain(self, tmp_path, toy_corpus):
        hyper = Hyperparams(num_topics=3, alpha=0.2, eta=0.1)
        state = init_state(toy_corpus, random_init(toy_corpus, 3, 1), hyper, seed=8)
        for _ in range(2):
            gibbs_pass(state)
        path = tmp_path / "chain.json"
        save_checkpoint(state, str(path))

        loaded = load_checkpoint(str(path), toy_corpus)
        assert loaded.pass_count == 2
        assert loaded.hyper == hyper
        assert loaded.rng_seed == 8
        for a, b in zip(loaded.z, state.z):
            assert np.array_equal(a, b)
        assert_count_invariants(loaded)

    def test_resume_equals_uninterrupted_run(self, tmp_path, toy_corpus):
        """Checkpoint at pass 3 and resume for 2 equals a straight 5-pass run."""
        hyper = Hyperparams(num_topics=2, alpha=0.3)
        straight = init_state(toy_corpus, random_init(toy_corpus, 2, 0), hyper, seed=5)
        for _ in range(5):
            gibbs_pass(straight)

        resumed = init_state(toy_corpus, random_init(toy_corpus, 2, 0), hyper, seed=5)
        for _ in range(3):
            gibbs_pass(resumed)
        path = tmp_path / "chain.json"
        save_checkpoint(resumed, str(path))
        resumed = load_checkpoint(str(path), toy_corpus)
        for _ in range(2):
            gibbs_pass(resumed)

        for a, b in zip(straight.z, resumed.z):
            assert np.array_equal(a, b)

    def test_checkpoint_corpus_mismatch(self, tmp_path, toy_corpus):
        state = init_state(
            toy_corpus, random_init(toy_corpus, 2, 0), Hyperparams(num_topics=2), 0
        )
        path = tmp_path / "chain.json"
        save_checkpoint(state, str(path))
        other = make_corpus([["p", "q"]])
        with pytest.raises(DataError):
            load_checkpoint(str(path), other)


class TestEndToEndDeterminism:
    def test_same_seed_same_everything(self, toy_corpus):
        def run():
            hyper = Hyperparams(num_topics=3, alpha=0.1, eta=0.1)
            state = init_state(toy_corpus, random_init(toy_corpus, 3, 2), hyper, seed=3)
            for _ in range(4):
                gibbs_pass(state)
            return state, estimate(state)

        (s1, m1), (s2, m2) = run(), run()
        assert all(np.array_equal(a, b) for a, b in zip(s1.z, s2.z))
        assert np.array_equal(s1.n_wt, s2.n_wt)
        assert np.array_equal(m1.theta, m2.theta)
        assert np.array_equal(m1.phi, m2.phi)
