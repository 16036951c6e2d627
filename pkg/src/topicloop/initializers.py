"""Initial topic assignments: random, embedding clusters, LLM-filtered clusters.

Every strategy is a pure function of (corpus, inputs, seed). The cluster
strategies assign a token deterministically when its word belongs to a usable
cluster and fall back to seeded-uniform labels otherwise; the fallback draw
covers all positions up front, so an empty or fully rejected cluster set
reproduces the random strategy bit for bit under the same seed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, CooccurrenceIndex, build_cooccurrence
from .errors import DataError, ResponseParseError, TransportError, ValidationError

logger = logging.getLogger(__name__)

Assignments = list[np.ndarray]
CoherenceJudge = Callable[[Sequence[str]], float]

ACCEPTED = "accepted"
REJECTED = "rejected"
UNEVALUATED = "unevaluated"
_LABELS = (ACCEPTED, REJECTED, UNEVALUATED)


@dataclass
class ClusterSet:
    """Disjoint word-index groups; cluster position doubles as the topic id.

    A label of "rejected" removes a cluster from deterministic assignment.
    Fresh (never judged) clusters carry "unevaluated" and remain usable for
    plain cluster initialization; the LLM-guided path instead masks anything
    it did not explicitly accept.
    """

    clusters: list[frozenset[int]]
    labels: list[str] = field(default_factory=list)
    scores: list[float | None] = field(default_factory=list)
    errors: list[str | None] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.clusters)
        self.clusters = [frozenset(c) for c in self.clusters]
        if not self.labels:
            self.labels = [UNEVALUATED] * n
        if not self.scores:
            self.scores = [None] * n
        if not self.errors:
            self.errors = [None] * n
        if not (len(self.labels) == len(self.scores) == len(self.errors) == n):
            raise ValidationError("cluster annotations must match the cluster count")
        for label in self.labels:
            if label not in _LABELS:
                raise ValidationError(f"unknown cluster label {label!r}")

    @property
    def num_topics(self) -> int:
        return len(self.clusters)

    def validate(self, vocab_size: int) -> None:
        seen: set[int] = set()
        for t, group in enumerate(self.clusters):
            for w in group:
                if not 0 <= w < vocab_size:
                    raise ValidationError(f"cluster {t} holds out-of-range word index {w}")
                if w in seen:
                    raise ValidationError(f"word index {w} appears in more than one cluster")
                seen.add(w)


@dataclass
class WordEmbedding:
    """Dense per-word vectors derived deterministically from the corpus."""

    vectors: np.ndarray  # vocab x dim
    dim: int
    warnings: list[str] = field(default_factory=list)


def _split_by_document(corpus: Corpus, flat: np.ndarray) -> Assignments:
    out: Assignments = []
    offset = 0
    for doc in corpus.documents:
        n = len(doc)
        out.append(flat[offset:offset + n].copy())
        offset += n
    return out


def random_init(corpus: Corpus, num_topics: int, seed: int) -> Assignments:
    """Independent uniform topic labels for every token position."""
    if num_topics < 1:
        raise ValidationError(f"num_topics must be >= 1, got {num_topics}")
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, num_topics, corpus.total_tokens, dtype=np.int64)
    return _split_by_document(corpus, flat)


def embed_vocabulary(
    corpus: Corpus,
    dim: int,
    index: CooccurrenceIndex | None = None,
) -> WordEmbedding:
    """Spectral embeddings of the dampened word-word co-occurrence matrix.

    The matrix holds log(1 + document co-occurrence count), with each word's
    own document frequency on the diagonal, and is factored by SVD. Sign
    ambiguity is fixed per component, so equal corpora give equal embeddings.

    The factorization is a dense SVD, sized for vocabularies up to a few
    thousand words; trim the vocabulary (min_count, stop words) before
    embedding anything much larger.
    """
    if dim < 2:
        raise ValidationError(f"embedding dim must be >= 2, got {dim}")
    vocab_size = len(corpus.vocabulary)
    warnings: list[str] = []
    effective = dim
    if vocab_size < dim:
        effective = vocab_size
        message = f"embedding dim reduced from {dim} to vocabulary size {vocab_size}"
        warnings.append(message)
        logger.warning(message)

    if index is None:
        index = build_cooccurrence(corpus)
    matrix = np.zeros((vocab_size, vocab_size), dtype=np.float64)
    for (i, j), count in index.pair_counts.items():
        matrix[i, j] = count
        matrix[j, i] = count
    np.fill_diagonal(matrix, index.single_counts)
    matrix = np.log1p(matrix)

    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    vectors = u[:, :effective] * np.sqrt(s[:effective])
    for k in range(effective):
        column = vectors[:, k]
        peak = int(np.argmax(np.abs(column)))
        if column[peak] < 0:
            vectors[:, k] = -column
    return WordEmbedding(vectors=vectors, dim=effective, warnings=warnings)


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Pairwise squared distances via the dot-product identity, O(n*k) memory."""
    d2 = (
        (points ** 2).sum(axis=1)[:, None]
        + (centers ** 2).sum(axis=1)[None, :]
        - 2.0 * points @ centers.T
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            choice = int(rng.choice(n, p=d2 / total))
        else:
            choice = int(rng.integers(n))
        centers[i] = points[choice]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def _repair_empty(points: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    """Give each empty cluster the farthest point of the largest cluster."""
    assign = assign.copy()
    for t in range(k):
        if np.any(assign == t):
            continue
        sizes = np.bincount(assign, minlength=k)
        largest = int(sizes.argmax())
        if sizes[largest] <= 1:
            continue  # nothing left to split
        members = np.nonzero(assign == largest)[0]
        centroid = points[members].mean(axis=0)
        spread = ((points[members] - centroid) ** 2).sum(axis=1)
        assign[int(members[int(spread.argmax())])] = t
    return assign


def kmeans_cluster(
    embeddings: WordEmbedding,
    num_topics: int,
    seed: int,
    max_iters: int = 100,
) -> ClusterSet:
    """Lloyd iterations with k-means++ seeding over the word embeddings."""
    points = embeddings.vectors
    n = points.shape[0]
    if num_topics < 1:
        raise ValidationError(f"num_topics must be >= 1, got {num_topics}")
    if num_topics > n:
        raise ValidationError(f"cannot form {num_topics} clusters from {n} embedded words")

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, num_topics, rng)
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = _squared_distances(points, centers)
        new_assign = d2.argmin(axis=1).astype(np.int64)
        new_assign = _repair_empty(points, new_assign, num_topics)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for t in range(num_topics):
            members = points[assign == t]
            if members.size:
                centers[t] = members.mean(axis=0)

    clusters = [frozenset(np.nonzero(assign == t)[0].tolist()) for t in range(num_topics)]
    return ClusterSet(clusters=clusters)


def cluster_init(corpus: Corpus, clusters: ClusterSet, seed: int) -> Assignments:
    """Assign each token its word's cluster id; unclustered tokens go random.

    Clusters labeled "rejected" contribute nothing; their words take the
    seeded fallback labels, exactly as words outside every cluster do.
    """
    clusters.validate(len(corpus.vocabulary))
    num_topics = clusters.num_topics
    if num_topics < 1:
        raise ValidationError("cluster set is empty")

    lookup = np.full(len(corpus.vocabulary), -1, dtype=np.int64)
    for t, (group, label) in enumerate(zip(clusters.clusters, clusters.labels)):
        if label == REJECTED:
            continue
        for w in group:
            lookup[w] = t

    rng = np.random.default_rng(seed)
    flat = rng.integers(0, num_topics, corpus.total_tokens, dtype=np.int64)
    if corpus.total_tokens:
        mapped = lookup[corpus.flat_tokens]
        deterministic = mapped >= 0
        flat[deterministic] = mapped[deterministic]
    return _split_by_document(corpus, flat)


def llm_guided_init(
    corpus: Corpus,
    clusters: ClusterSet,
    judge: CoherenceJudge,
    threshold: float = 0.5,
    seed: int = 0,
    max_words_per_prompt: int = 20,
    fan_out: int = 4,
) -> tuple[Assignments, ClusterSet]:
    """Keep only clusters the coherence judge scores at or above threshold.

    Each cluster is represented to the judge by its most frequent words
    (capped per prompt). Judge transport or parse failures mark the cluster
    unevaluated; unevaluated and rejected clusters alike fall back to the
    seeded random assignment. Judging may fan out across threads; outcomes
    are joined by cluster index so results stay deterministic.
    """
    if not callable(judge):
        raise ValidationError("judge must be callable")
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    clusters.validate(len(corpus.vocabulary))

    frequency = corpus.token_frequency
    words = corpus.vocabulary.words

    def representative_words(group: frozenset[int]) -> list[str]:
        order = sorted(group, key=lambda w: (-int(frequency[w]), w))
        return [words[w] for w in order[:max_words_per_prompt]]

    def judge_one(t: int) -> tuple[float | None, str | None]:
        group = clusters.clusters[t]
        if not group:
            return None, None
        try:
            return float(judge(representative_words(group))), None
        except (TransportError, ResponseParseError) as exc:
            logger.warning("coherence judge failed on cluster %d: %s", t, exc)
            return None, str(exc)

    num_topics = clusters.num_topics
    if fan_out > 1 and num_topics > 1:
        with ThreadPoolExecutor(max_workers=min(fan_out, num_topics)) as pool:
            outcomes = list(pool.map(judge_one, range(num_topics)))
    else:
        outcomes = [judge_one(t) for t in range(num_topics)]

    labels: list[str] = []
    scores: list[float | None] = []
    errors: list[str | None] = []
    for t, (score, error) in enumerate(outcomes):
        scores.append(score)
        errors.append(error)
        if score is None:
            labels.append(REJECTED if not clusters.clusters[t] else UNEVALUATED)
        elif score >= threshold:
            labels.append(ACCEPTED)
        else:
            labels.append(REJECTED)

    annotated = ClusterSet(
        clusters=list(clusters.clusters), labels=labels, scores=scores, errors=errors
    )
    masked = ClusterSet(
        clusters=[
            group if label == ACCEPTED else frozenset()
            for group, label in zip(annotated.clusters, labels)
        ],
        labels=list(labels),
        scores=list(scores),
        errors=list(errors),
    )
    return cluster_init(corpus, masked, seed), annotated


def cluster_set_to_json(clusters: ClusterSet, corpus: Corpus) -> dict:
    """JSON form with word strings: {"clusters": [[word, ...], ...], "labels": [...]}."""
    words = corpus.vocabulary.words
    return {
        "clusters": [[words[w] for w in sorted(group)] for group in clusters.clusters],
        "labels": list(clusters.labels),
    }


def cluster_set_from_json(obj: dict, corpus: Corpus) -> ClusterSet:
    if not isinstance(obj, dict) or "clusters" not in obj:
        raise DataError("cluster set JSON must be an object with a 'clusters' field")
    index_of = corpus.vocabulary.index_of
    groups: list[frozenset[int]] = []
    for k, group in enumerate(obj["clusters"]):
        indices = []
        for word in group:
            if word not in index_of:
                raise DataError(f"cluster {k} references unknown word {word!r}")
            indices.append(index_of[word])
        groups.append(frozenset(indices))
    labels = obj.get("labels") or []
    return ClusterSet(clusters=groups, labels=list(labels))
