"""Perplexity and PMI/NPMI coherence.

Two perplexity forms are provided. ``entropy_perplexity`` is the literal
distribution form 2^H(p); ``corpus_perplexity`` is the per-token predictive
form used for convergence traces. PMI uses natural log with the joint
probability smoothed by a tiny epsilon so disjoint pairs stay finite; NPMI
is base-invariant, lands in [-1, 1], and handles self-association and
certain co-occurrence analytically.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .corpus import CooccurrenceIndex, Corpus
from .errors import ValidationError
from .sampler import TopicModel

JOINT_SMOOTHING = 1e-12
SIMPLEX_TOLERANCE = 1e-9

# Evaluate corpus log-likelihood in document blocks to keep the dense
# doc x vocab mixture matrix small.
_PERPLEXITY_BLOCK = 512


def entropy_perplexity(p: Sequence[float]) -> float:
    """2 raised to the Shannon entropy of a distribution, with 0*log0 = 0."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("expected a non-empty probability vector")
    if np.any(arr < 0):
        raise ValidationError("probability vector has negative entries")
    if abs(float(arr.sum()) - 1.0) > SIMPLEX_TOLERANCE:
        raise ValidationError(f"probability vector sums to {arr.sum()!r}, not 1")
    nz = arr[arr > 0]
    return float(2.0 ** (-float(np.sum(nz * np.log2(nz)))))


def corpus_perplexity(model: TopicModel, corpus: Corpus) -> float:
    """exp of the mean negative per-token log mixture probability."""
    num_docs = corpus.num_docs
    vocab_size = len(corpus.vocabulary)
    if model.theta.shape[0] != num_docs or model.phi.shape[1] != vocab_size:
        raise ValidationError(
            f"model dimensions {model.theta.shape[0]}x{model.phi.shape[1]} do not match "
            f"corpus {num_docs} docs x {vocab_size} words"
        )
    if corpus.total_tokens == 0:
        raise ValidationError("corpus has no tokens to score")

    flat_tokens = corpus.flat_tokens
    flat_docs = corpus.flat_doc_ids
    log_lik = 0.0
    for start in range(0, num_docs, _PERPLEXITY_BLOCK):
        stop = min(start + _PERPLEXITY_BLOCK, num_docs)
        lo = int(np.searchsorted(flat_docs, start))
        hi = int(np.searchsorted(flat_docs, stop))
        if lo == hi:
            continue
        mixture = model.theta[start:stop] @ model.phi
        probs = mixture[flat_docs[lo:hi] - start, flat_tokens[lo:hi]]
        if np.any(probs <= 0.0):
            raise ValidationError("a token has zero mixture probability; use a positive eta")
        log_lik += float(np.log(probs).sum())
    return float(math.exp(-log_lik / corpus.total_tokens))


def pmi(index: CooccurrenceIndex, wi: str, wj: str) -> float:
    """Pointwise mutual information from document frequencies, natural log."""
    i = index.resolve(wi)
    j = index.resolve(wj)
    n = index.doc_count
    p_i = index.single(i) / n
    if p_i == 0.0:
        raise ValidationError(f"word {wi!r} occurs in no document")
    if i == j:
        # A word always co-occurs with itself: joint equals its marginal.
        return -math.log(p_i)
    p_j = index.single(j) / n
    if p_j == 0.0:
        raise ValidationError(f"word {wj!r} occurs in no document")
    joint = index.pair(i, j) / n + JOINT_SMOOTHING
    return math.log(joint / (p_i * p_j))


def npmi(index: CooccurrenceIndex, wi: str, wj: str) -> float:
    """PMI normalized by -log joint probability; clamped to [-1, 1]."""
    i = index.resolve(wi)
    j = index.resolve(wj)
    if i == j:
        return 1.0
    if index.pair(i, j) == index.doc_count:
        # Joint probability 1 makes the normalizer vanish; perfect association.
        return 1.0
    value = pmi(index, wi, wj)
    joint = index.pair(i, j) / index.doc_count + JOINT_SMOOTHING
    normalized = value / (-math.log(joint))
    return max(-1.0, min(1.0, normalized))


@dataclass
class CoherenceResult:
    """Pairwise NPMI aggregate over a topic's usable words.

    mean_npmi/sum_npmi are None when fewer than two words are usable,
    which is distinct from a genuine zero.
    """

    mean_npmi: float | None
    sum_npmi: float | None
    pair_count: int
    used_words: list[str]
    skipped_words: list[str]


def coherence_detail(index: CooccurrenceIndex, topic_words: Sequence[str]) -> CoherenceResult:
    """Mean and sum of pairwise NPMI; words missing from the index are skipped."""
    seen: set[str] = set()
    used: list[str] = []
    skipped: list[str] = []
    for w in topic_words:
        if w in seen:
            continue
        seen.add(w)
        if w in index.vocabulary and index.single(index.vocabulary.index_of[w]) > 0:
            used.append(w)
        else:
            skipped.append(w)
    if len(used) < 2:
        return CoherenceResult(None, None, 0, used, skipped)
    # Sort by vocabulary index for a deterministic, order-invariant reduction.
    used.sort(key=lambda w: index.vocabulary.index_of[w])
    values = [npmi(index, a, b) for a, b in combinations(used, 2)]
    return CoherenceResult(
        mean_npmi=float(np.mean(values)),
        sum_npmi=float(np.sum(values)),
        pair_count=len(values),
        used_words=used,
        skipped_words=skipped,
    )


def topic_coherence(index: CooccurrenceIndex, topic_words: Sequence[str]) -> float | None:
    """Mean pairwise NPMI of a topic's words, or None when undefined."""
    return coherence_detail(index, topic_words).mean_npmi


@dataclass
class DescentReport:
    rates: list[float]
    mean_rate: float


def descent_rate(trace: Sequence[float]) -> DescentReport:
    """Per-pass relative perplexity decreases: (prev - cur) / prev."""
    values = [float(v) for v in trace]
    if len(values) < 2:
        raise ValidationError("descent rate needs a trace of at least two values")
    if any(v <= 0 for v in values):
        raise ValidationError("perplexity trace values must be positive")
    rates = [(prev - cur) / prev for prev, cur in zip(values, values[1:])]
    return DescentReport(rates=rates, mean_rate=float(np.mean(rates)))


@dataclass
class EvalSnapshot:
    """Metrics recorded at one evaluation pass."""

    pass_index: int
    perplexity: float
    coherence_per_topic: list[float | None]
    coherence_mean: float | None
    coherence_sum_mean: float | None
    skipped_words: int


@dataclass
class MetricReport:
    """Per-run metrics plus the configuration that produced them."""

    method: str
    eta_mode: str
    beta: float
    num_topics: int
    alpha: float
    seed: int
    top_n: int
    per_pass_perplexity: list[tuple[int, float]]
    descent_rates: list[float] = field(default_factory=list)
    mean_descent_rate: float | None = None
    snapshots: list[EvalSnapshot] = field(default_factory=list)

    @property
    def coherence_per_topic(self) -> list[float | None]:
        return self.snapshots[-1].coherence_per_topic if self.snapshots else []

    @property
    def coherence_aggregate(self) -> float | None:
        return self.snapshots[-1].coherence_mean if self.snapshots else None

    def validate(self) -> None:
        if any(v <= 0 for _, v in self.per_pass_perplexity):
            raise ValidationError("perplexity trace contains non-positive values")
        passes = len(self.per_pass_perplexity) - 1
        if self.per_pass_perplexity and len(self.descent_rates) != max(passes, 0):
            raise ValidationError("descent_rates length does not match the trace")
        for snap in self.snapshots:
            if snap.coherence_mean is not None and not -1.0 <= snap.coherence_mean <= 1.0:
                raise ValidationError("mean NPMI coherence outside [-1, 1]")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "eta_mode": self.eta_mode,
            "beta": self.beta,
            "num_topics": self.num_topics,
            "alpha": self.alpha,
            "seed": self.seed,
            "top_n": self.top_n,
            "per_pass_perplexity": [[p, v] for p, v in self.per_pass_perplexity],
            "descent_rates": self.descent_rates,
            "mean_descent_rate": self.mean_descent_rate,
            "snapshots": [
                {
                    "pass": s.pass_index,
                    "perplexity": s.perplexity,
                    "coherence_per_topic": s.coherence_per_topic,
                    "coherence_mean": s.coherence_mean,
                    "coherence_sum_mean": s.coherence_sum_mean,
                    "skipped_words": s.skipped_words,
                }
                for s in self.snapshots
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricReport":
        return cls(
            method=obj["method"],
            eta_mode=obj["eta_mode"],
            beta=obj["beta"],
            num_topics=obj["num_topics"],
            alpha=obj["alpha"],
            seed=obj["seed"],
            top_n=obj["top_n"],
            per_pass_perplexity=[(int(p), float(v)) for p, v in obj["per_pass_perplexity"]],
            descent_rates=[float(r) for r in obj["descent_rates"]],
            mean_descent_rate=obj.get("mean_descent_rate"),
            snapshots=[
                EvalSnapshot(
                    pass_index=int(s["pass"]),
                    perplexity=float(s["perplexity"]),
                    coherence_per_topic=s["coherence_per_topic"],
                    coherence_mean=s["coherence_mean"],
                    coherence_sum_mean=s["coherence_sum_mean"],
                    skipped_words=int(s["skipped_words"]),
                )
                for s in obj["snapshots"]
            ],
        )


def _snapshot_value(snap: EvalSnapshot, metric: str) -> float | None:
    if metric == "perplexity":
        return snap.perplexity
    if metric == "coherence_mean":
        return snap.coherence_mean
    if metric == "coherence_sum":
        return snap.coherence_sum_mean
    raise ValidationError(f"unknown metric {metric!r}")


def reports_to_csv(reports: Iterable[MetricReport], metric: str = "perplexity") -> str:
    """Merged table: one row per (method, eta), one column per eval pass.

    Cells average the metric over all reports (seeds) sharing the row key;
    rows keep first-appearance order so output is deterministic.
    """
    reports = list(reports)
    passes: list[int] = sorted({s.pass_index for r in reports for s in r.snapshots})
    row_keys: list[tuple[str, str]] = []
    grouped: dict[tuple[str, str], list[MetricReport]] = {}
    for r in reports:
        key = (r.method, r.eta_mode)
        if key not in grouped:
            grouped[key] = []
            row_keys.append(key)
        grouped[key].append(r)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "eta"] + [f"pass={p}" for p in passes])
    for method, eta_mode in row_keys:
        row: list[str] = [method, eta_mode]
        for p in passes:
            values = []
            for r in grouped[(method, eta_mode)]:
                for s in r.snapshots:
                    if s.pass_index == p:
                        v = _snapshot_value(s, metric)
                        if v is not None:
                            values.append(v)
            # mean over seeds; blank when nothing was recorded at this pass
            row.append(repr(float(np.mean(values))) if values else "")
        writer.writerow(row)
    return buf.getvalue()
