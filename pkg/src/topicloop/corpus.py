"""Corpus ingestion: vocabulary filtering, index encoding, co-occurrence counts.

Tokens are caller-supplied strings; no segmentation or stemming happens here.
Vocabulary indices follow first appearance order, so rebuilding from the same
input and configuration is byte-identical.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ValidationError

# Above this vocabulary size the dense incidence product gets heavy; fall
# back to per-document pair counting.
_DENSE_PAIR_LIMIT = 2048

BUNDLE_FORMAT = "topicloop-corpus-bundle"


@dataclass(frozen=True)
class Vocabulary:
    """Retained token strings with dense indices in first-appearance order."""

    words: tuple[str, ...]
    index_of: dict[str, int]
    doc_frequency: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index_of


@dataclass(frozen=True)
class Document:
    id: str
    tokens: np.ndarray  # vocabulary indices, possibly empty, repeats allowed

    def __len__(self) -> int:
        return int(self.tokens.size)


@dataclass
class Corpus:
    vocabulary: Vocabulary
    documents: tuple[Document, ...]
    total_tokens: int

    @property
    def num_docs(self) -> int:
        return len(self.documents)

    def decode(self, doc: Document) -> list[str]:
        """Map a document's indices back to its token strings."""
        words = self.vocabulary.words
        return [words[i] for i in doc.tokens]

    @cached_property
    def doc_lengths(self) -> np.ndarray:
        return np.array([len(d) for d in self.documents], dtype=np.int64)

    @cached_property
    def flat_tokens(self) -> np.ndarray:
        """All token indices concatenated in (document, position) order."""
        if not self.documents:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([d.tokens for d in self.documents])

    @cached_property
    def flat_doc_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_docs, dtype=np.int64), self.doc_lengths)

    @cached_property
    def token_frequency(self) -> np.ndarray:
        """Total occurrence count per vocabulary index."""
        return np.bincount(self.flat_tokens, minlength=len(self.vocabulary)).astype(np.int64)


def build_corpus(
    raw_docs: Iterable[tuple[str, Sequence[str]]],
    min_count: int = 1,
    stopwords: Iterable[str] = (),
) -> Corpus:
    """Filter tokens by document frequency and stop words, then encode.

    A word is retained when it occurs in at least ``min_count`` documents and
    is not a stop word. Documents that lose every token stay in the corpus
    with length 0 so document indexing is preserved downstream.
    """
    raw_docs = list(raw_docs)
    if not raw_docs:
        raise ValidationError("raw_docs must not be empty")
    if min_count < 1:
        raise ValidationError(f"min_count must be >= 1, got {min_count}")
    stopset = frozenset(stopwords)

    df: Counter = Counter()
    for _, tokens in raw_docs:
        df.update(set(tokens))

    words: list[str] = []
    index_of: dict[str, int] = {}
    doc_freq: list[int] = []
    documents: list[Document] = []
    total = 0
    for doc_id, tokens in raw_docs:
        encoded: list[int] = []
        for tok in tokens:
            if df[tok] < min_count or tok in stopset:
                continue
            idx = index_of.get(tok)
            if idx is None:
                idx = len(words)
                index_of[tok] = idx
                words.append(tok)
                doc_freq.append(df[tok])
            encoded.append(idx)
        documents.append(Document(id=str(doc_id), tokens=np.array(encoded, dtype=np.int64)))
        total += len(encoded)

    if not words:
        raise DataError("empty corpus: no tokens survive frequency and stop-word filtering")

    vocab = Vocabulary(words=tuple(words), index_of=index_of, doc_frequency=tuple(doc_freq))
    return Corpus(vocabulary=vocab, documents=tuple(documents), total_tokens=total)


@dataclass
class CooccurrenceIndex:
    """Document-level co-occurrence counts backing PMI computations.

    Repeats within a document count once. Pairs are keyed (i, j) with i < j;
    self-pairs are never stored (metrics handles self-association
    analytically).
    """

    vocabulary: Vocabulary
    doc_count: int
    single_counts: np.ndarray
    pair_counts: dict[tuple[int, int], int]

    def resolve(self, word: str) -> int:
        idx = self.vocabulary.index_of.get(word)
        if idx is None:
            raise ValidationError(f"word {word!r} is not in the vocabulary")
        return idx

    def single(self, wi: int) -> int:
        return int(self.single_counts[wi])

    def pair(self, wi: int, wj: int) -> int:
        if wi == wj:
            raise ValidationError("self-pairs are not stored in the co-occurrence index")
        key = (wi, wj) if wi < wj else (wj, wi)
        return self.pair_counts.get(key, 0)


def build_cooccurrence(corpus: Corpus) -> CooccurrenceIndex:
    """Count, per word and per unordered word pair, the documents containing it."""
    vocab_size = len(corpus.vocabulary)
    num_docs = corpus.num_docs
    distinct = [np.unique(d.tokens) for d in corpus.documents]

    single = np.zeros(vocab_size, dtype=np.int64)
    for idxs in distinct:
        single[idxs] += 1

    pairs: dict[tuple[int, int], int] = {}
    if vocab_size <= _DENSE_PAIR_LIMIT:
        incidence = np.zeros((num_docs, vocab_size), dtype=np.int32)
        for row, idxs in enumerate(distinct):
            incidence[row, idxs] = 1
        joint = incidence.T @ incidence
        ii, jj = np.nonzero(np.triu(joint, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            pairs[(i, j)] = int(joint[i, j])
    else:
        counter: Counter = Counter()
        for idxs in distinct:
            counter.update(combinations(idxs.tolist(), 2))
        pairs = {pair: int(c) for pair, c in counter.items()}

    return CooccurrenceIndex(corpus.vocabulary, num_docs, single, pairs)


def load_jsonl(path: str) -> list[tuple[str, list[str]]]:
    """Read one document per line: {"id": str, "tokens": [str, ...]}."""
    docs: list[tuple[str, list[str]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "tokens" not in obj:
                raise DataError(
                    f"{path}: line {lineno} must be an object with 'id' and 'tokens' fields"
                )
            tokens = obj["tokens"]
            if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                raise DataError(f"{path}: line {lineno}: 'tokens' must be a list of strings")
            docs.append((str(obj["id"]), tokens))
    if not docs:
        raise DataError(f"{path}: no documents found")
    return docs


def load_stopwords(path: str) -> frozenset[str]:
    """Read a stop-word file, one token per line."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())


def save_bundle(corpus: Corpus, path: str) -> None:
    """Write a reusable corpus artifact (vocabulary plus encoded documents)."""
    payload = {
        "format": BUNDLE_FORMAT,
        "version": 1,
        "words": list(corpus.vocabulary.words),
        "doc_frequency": list(corpus.vocabulary.doc_frequency),
        "documents": [
            {"id": d.id, "tokens": d.tokens.tolist()} for d in corpus.documents
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)


def load_bundle(path: str) -> Corpus:
    """Load a corpus bundle written by :func:`save_bundle`."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read corpus bundle {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != BUNDLE_FORMAT:
        raise DataError(f"{path} is not a corpus bundle")

    words = payload["words"]
    doc_frequency = payload["doc_frequency"]
    if len(words) != len(doc_frequency) or not words:
        raise DataError(f"{path}: vocabulary and doc_frequency lengths disagree")
    vocab = Vocabulary(
        words=tuple(words),
        index_of={w: i for i, w in enumerate(words)},
        doc_frequency=tuple(int(c) for c in doc_frequency),
    )
    documents = []
    total = 0
    for entry in payload["documents"]:
        tokens = np.array(entry["tokens"], dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= len(words)):
            raise DataError(f"{path}: document {entry['id']!r} has out-of-range token index")
        documents.append(Document(id=str(entry["id"]), tokens=tokens))
        total += int(tokens.size)
    if not documents:
        raise DataError(f"{path}: bundle contains no documents")
    return Corpus(vocabulary=vocab, documents=tuple(documents), total_tokens=total)
