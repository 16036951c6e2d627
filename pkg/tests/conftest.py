import numpy as np
import pytest

from topicloop.corpus import build_cooccurrence, build_corpus


def make_corpus(token_lists, min_count=1, stopwords=()):
    """Corpus from raw token lists with generated ids."""
    raw = [(f"d{i}", tokens) for i, tokens in enumerate(token_lists)]
    return build_corpus(raw, min_count=min_count, stopwords=stopwords)


@pytest.fixture
def toy_corpus():
    """Five docs over a small vocabulary with mixed overlap."""
    return make_corpus(
        [
            ["ball", "goal", "ball", "match"],
            ["goal", "match", "coach"],
            ["stock", "bond", "stock"],
            ["bond", "market", "stock", "goal"],
            ["market", "coach"],
        ]
    )


@pytest.fixture
def toy_index(toy_corpus):
    return build_cooccurrence(toy_corpus)


def brute_force_counts(corpus, assignments, num_topics):
    """Independent recount of the sampler count structures from raw labels."""
    vocab_size = len(corpus.vocabulary)
    n_wt = np.zeros((vocab_size, num_topics), dtype=np.int64)
    n_td = np.zeros((corpus.num_docs, num_topics), dtype=np.int64)
    n_t = np.zeros(num_topics, dtype=np.int64)
    for d, doc in enumerate(corpus.documents):
        for pos in range(len(doc)):
            w = int(doc.tokens[pos])
            t = int(assignments[d][pos])
            n_wt[w, t] += 1
            n_td[d, t] += 1
            n_t[t] += 1
    return n_wt, n_td, n_t
