"""Collapsed Gibbs sampling for latent Dirichlet allocation.

State is the per-token topic labels plus the three count structures the
full conditional needs: word-topic counts, document-topic counts, and topic
totals. Counts are exact machine integers; the conservation identities hold
after every sweep.

Randomness comes from numpy's PCG64. A chain seeded with ``s`` draws the
per-token uniforms for sweep ``k`` from ``numpy.random.default_rng([s, k])``,
so identical seeds replay byte-identically across runs and a checkpoint
resumed at pass ``k`` continues exactly as the original chain would have.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .errors import DataError, ValidationError

CHECKPOINT_FORMAT = "topicloop-checkpoint"
MODEL_FORMAT = "topicloop-model"


@dataclass(frozen=True)
class Hyperparams:
    """Symmetric Dirichlet priors.

    ``eta`` is the topic-word prior; None selects the auto prior 1/num_topics
    (an even topic-word distribution), while an explicit value such as 0.1
    gives a sparser one. ``alpha`` is the document-topic prior.
    """

    num_topics: int
    alpha: float = 0.1
    eta: float | None = None

    def __post_init__(self):
        if self.num_topics < 1:
            raise ValidationError(f"num_topics must be >= 1, got {self.num_topics}")
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if self.eta is not None and self.eta <= 0:
            raise ValidationError(f"eta must be positive when given, got {self.eta}")

    @property
    def beta(self) -> float:
        """Resolved topic-word prior value."""
        return self.eta if self.eta is not None else 1.0 / self.num_topics

    @property
    def eta_mode(self) -> str:
        return "auto" if self.eta is None else str(self.eta)


@dataclass
class SamplerState:
    """Mutable Markov-chain state; exclusively owned while a sweep runs."""

    corpus: Corpus
    hyper: Hyperparams
    rng_seed: int
    z: list[np.ndarray]      # per-document topic labels, one per token position
    n_wt: np.ndarray         # vocab x topics
    n_td: np.ndarray         # docs x topics
    n_t: np.ndarray          # topics
    pass_count: int = 0


@dataclass
class TopicModel:
    """Point estimates: document-topic rows theta, topic-word rows phi."""

    theta: np.ndarray        # docs x topics
    phi: np.ndarray          # topics x vocab
    vocabulary: tuple[str, ...]

    @property
    def num_topics(self) -> int:
        return int(self.phi.shape[0])

    @property
    def vocab_size(self) -> int:
        return int(self.phi.shape[1])


def init_state(
    corpus: Corpus,
    assignments: list[np.ndarray],
    hyper: Hyperparams,
    seed: int = 0,
) -> SamplerState:
    """Build sampler counts from initial per-token topic assignments."""
    if seed < 0:
        raise ValidationError(f"rng seed must be non-negative, got {seed}")
    if len(assignments) != corpus.num_docs:
        raise ValidationError(
            f"got {len(assignments)} assignment sequences for {corpus.num_docs} documents"
        )
    num_topics = hyper.num_topics
    vocab_size = len(corpus.vocabulary)
    n_wt = np.zeros((vocab_size, num_topics), dtype=np.int64)
    n_td = np.zeros((corpus.num_docs, num_topics), dtype=np.int64)
    n_t = np.zeros(num_topics, dtype=np.int64)

    z: list[np.ndarray] = []
    for d, (doc, labels) in enumerate(zip(corpus.documents, assignments)):
        arr = np.asarray(labels, dtype=np.int64).reshape(-1)
        if arr.size != len(doc):
            raise ValidationError(
                f"document {doc.id!r} (index {d}): {arr.size} labels for {len(doc)} tokens"
            )
        bad = np.nonzero((arr < 0) | (arr >= num_topics))[0]
        if bad.size:
            pos = int(bad[0])
            raise ValidationError(
                f"document {doc.id!r} (index {d}), position {pos}: "
                f"topic label {int(arr[pos])} outside 0..{num_topics - 1}"
            )
        z.append(arr.copy())
        if arr.size:
            np.add.at(n_wt, (doc.tokens, arr), 1)
            np.add.at(n_td[d], arr, 1)
            np.add.at(n_t, arr, 1)

    return SamplerState(
        corpus=corpus, hyper=hyper, rng_seed=int(seed),
        z=z, n_wt=n_wt, n_td=n_td, n_t=n_t,
    )


def conditional_distribution(state: SamplerState, doc: int, pos: int) -> np.ndarray:
    """Full conditional over topics for the token at (doc, pos).

    The token's own current assignment is excluded from the counts before
    evaluating, so the caller passes the ordinary (fully counted) state.
    """
    if not 0 <= doc < state.corpus.num_docs:
        raise ValidationError(f"document index {doc} out of range")
    document = state.corpus.documents[doc]
    if not 0 <= pos < len(document):
        raise ValidationError(f"position {pos} out of range for document {document.id!r}")

    hyper = state.hyper
    num_topics = hyper.num_topics
    vocab_size = len(state.corpus.vocabulary)
    w = int(document.tokens[pos])
    t_old = int(state.z[doc][pos])

    nwt = state.n_wt[w].astype(np.float64)
    nt = state.n_t.astype(np.float64)
    ntd = state.n_td[doc].astype(np.float64)
    nwt[t_old] -= 1.0
    nt[t_old] -= 1.0
    ntd[t_old] -= 1.0

    doc_len = len(document)
    weights = (
        (nwt + hyper.beta) / (nt + vocab_size * hyper.beta)
        * (ntd + hyper.alpha) / (doc_len - 1 + num_topics * hyper.alpha)
    )
    return weights / weights.sum()


def gibbs_pass(state: SamplerState) -> SamplerState:
    """One full sweep in (document, position) order; mutates and returns state.

    Each token is removed from the counts, a topic is drawn from the full
    conditional, and the counts are re-incremented. The sweep consumes one
    pre-drawn uniform per token from the pass-indexed substream.
    """
    corpus = state.corpus
    num_topics = state.hyper.num_topics
    total = corpus.total_tokens
    if total == 0 or num_topics == 1:
        state.pass_count += 1
        return state

    uniforms = np.random.default_rng([state.rng_seed, state.pass_count]).random(total)

    # The sweep runs over plain lists: per-token numpy indexing costs more
    # than the arithmetic itself at typical topic counts.
    words = corpus.flat_tokens.tolist()
    doc_ids = corpus.flat_doc_ids.tolist()
    zflat = np.concatenate(state.z).tolist()
    n_wt = state.n_wt.tolist()
    n_td = state.n_td.tolist()
    n_t = state.n_t.tolist()
    u = uniforms.tolist()

    alpha = state.hyper.alpha
    beta = state.hyper.beta
    vbeta = len(corpus.vocabulary) * beta
    cumulative = [0.0] * num_topics
    topics = range(num_topics)

    for i in range(total):
        w = words[i]
        d = doc_ids[i]
        t_old = zflat[i]
        row_w = n_wt[w]
        row_d = n_td[d]
        row_w[t_old] -= 1
        row_d[t_old] -= 1
        n_t[t_old] -= 1

        # Document-side denominator is constant in t and cancels on draw.
        acc = 0.0
        for t in topics:
            acc += (row_w[t] + beta) / (n_t[t] + vbeta) * (row_d[t] + alpha)
            cumulative[t] = acc
        target = u[i] * acc
        t_new = num_topics - 1
        for t in topics:
            if cumulative[t] > target:
                t_new = t
                break

        zflat[i] = t_new
        row_w[t_new] += 1
        row_d[t_new] += 1
        n_t[t_new] += 1

    flat = np.asarray(zflat, dtype=np.int64)
    offset = 0
    for d, doc in enumerate(corpus.documents):
        n = len(doc)
        state.z[d] = flat[offset:offset + n]
        offset += n
    state.n_wt = np.asarray(n_wt, dtype=np.int64)
    state.n_td = np.asarray(n_td, dtype=np.int64)
    state.n_t = np.asarray(n_t, dtype=np.int64)
    state.pass_count += 1
    return state


def estimate(state: SamplerState) -> TopicModel:
    """Smoothed point estimates of theta and phi from the current counts."""
    hyper = state.hyper
    num_topics = hyper.num_topics
    vocab_size = len(state.corpus.vocabulary)
    lengths = state.corpus.doc_lengths.astype(np.float64)
    theta = (state.n_td + hyper.alpha) / (lengths[:, None] + num_topics * hyper.alpha)
    phi = (state.n_wt.T + hyper.beta) / (state.n_t[:, None] + vocab_size * hyper.beta)
    return TopicModel(theta=theta, phi=phi, vocabulary=state.corpus.vocabulary.words)


def top_words(model: TopicModel, topic: int, n: int) -> list[str]:
    """The n highest-weight words of a topic; ties break toward lower index."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not 0 <= topic < model.num_topics:
        raise ValidationError(f"topic index {topic} out of range")
    order = np.argsort(-model.phi[topic], kind="stable")
    return [model.vocabulary[i] for i in order[:n]]


def save_checkpoint(state: SamplerState, path: str) -> None:
    """Self-describing chain snapshot: labels, priors, seed, pass counter."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "num_topics": state.hyper.num_topics,
        "alpha": state.hyper.alpha,
        "eta": state.hyper.eta,
        "rng_seed": state.rng_seed,
        "pass_count": state.pass_count,
        "z": [arr.tolist() for arr in state.z],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str, corpus: Corpus) -> SamplerState:
    """Rebuild a chain from a checkpoint by recounting its labels."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a sampler checkpoint")
    hyper = Hyperparams(
        num_topics=int(payload["num_topics"]),
        alpha=float(payload["alpha"]),
        eta=None if payload["eta"] is None else float(payload["eta"]),
    )
    assignments = [np.array(labels, dtype=np.int64) for labels in payload["z"]]
    try:
        state = init_state(corpus, assignments, hyper, seed=int(payload["rng_seed"]))
    except ValidationError as exc:
        raise DataError(f"checkpoint {path} does not match the corpus: {exc}") from exc
    state.pass_count = int(payload["pass_count"])
    return state


def save_model(model: TopicModel, path: str, meta: dict | None = None) -> None:
    """Write theta/phi with the vocabulary and optional training metadata."""
    payload = {
        "format": MODEL_FORMAT,
        "version": 1,
        "vocabulary": list(model.vocabulary),
        "theta": model.theta.tolist(),
        "phi": model.phi.tolist(),
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)


def load_model(path: str) -> tuple[TopicModel, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise DataError(f"{path} is not a topic model file")
    model = TopicModel(
        theta=np.array(payload["theta"], dtype=np.float64),
        phi=np.array(payload["phi"], dtype=np.float64),
        vocabulary=tuple(payload["vocabulary"]),
    )
    if model.phi.ndim != 2 or model.phi.shape[1] != len(model.vocabulary):
        raise DataError(f"{path}: phi shape does not match the vocabulary")
    return model, payload.get("meta", {})
