"""LLM-guided removal of off-topic words from learned topic word lists.

Only the reported word lists change; the model's distributions are left
untouched. The judge sees one prompt per topic and answers yes, or no plus
the words to drop. Flagged words the topic never contained are judge noise:
they are logged on the record and never removed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import CooccurrenceIndex
from .errors import ResponseParseError, TransportError, ValidationError
from .llm import Verdict
from .metrics import topic_coherence
from .sampler import TopicModel, top_words

CorrectionJudge = Callable[[Sequence[str]], Verdict]

# Coherence is undefined below two words, so removal never shrinks a topic
# past this size.
MIN_TOPIC_SIZE = 2


@dataclass
class CorrectionRecord:
    """Outcome of judging one topic's top-word list."""

    topic_index: int
    original_words: list[str]
    removed_words: list[str]
    kept_words: list[str]
    noise_words: list[str] = field(default_factory=list)
    coherence_before: float | None = None
    coherence_after: float | None = None
    truncated: bool = False
    failed: bool = False
    error: str | None = None
    raw_response: str = ""

    def to_dict(self) -> dict:
        return {
            "topic_index": self.topic_index,
            "original_words": self.original_words,
            "removed_words": self.removed_words,
            "kept_words": self.kept_words,
            "noise_words": self.noise_words,
            "coherence_before": self.coherence_before,
            "coherence_after": self.coherence_after,
            "truncated": self.truncated,
            "failed": self.failed,
            "error": self.error,
            "raw_response": self.raw_response,
        }


@dataclass
class CorrectionSummary:
    """Aggregate coherence change across all corrected topics.

    Both aggregate views are reported: the relative change of the mean
    coherence, and the mean of per-topic relative changes. Denominators use
    the magnitude of the before value so the sign stays meaningful for
    negative coherence baselines.
    """

    topics: int
    failed_topics: int
    undefined_topics: int
    mean_before: float | None
    mean_after: float | None
    aggregate_relative_improvement: float | None
    mean_relative_improvement: float | None

    def to_dict(self) -> dict:
        return {
            "topics": self.topics,
            "failed_topics": self.failed_topics,
            "undefined_topics": self.undefined_topics,
            "mean_before": self.mean_before,
            "mean_after": self.mean_after,
            "aggregate_relative_improvement": self.aggregate_relative_improvement,
            "mean_relative_improvement": self.mean_relative_improvement,
        }


def correct_topic(
    topic_words: Sequence[str],
    judge: CorrectionJudge,
    index: CooccurrenceIndex,
    topic_index: int = 0,
    max_words_per_prompt: int = 20,
) -> CorrectionRecord:
    """Judge one topic's words and drop the flagged ones.

    Transport or parse failures leave the topic uncorrected and flag the
    record instead of raising. If removal would leave fewer than two words,
    the highest-ranked flagged words are retained and the record is marked
    truncated.
    """
    words = list(topic_words)
    if len(words) < MIN_TOPIC_SIZE:
        raise ValidationError(f"topic needs at least {MIN_TOPIC_SIZE} words, got {len(words)}")
    if len(words) > max_words_per_prompt:
        raise ValidationError(
            f"{len(words)} words exceed the per-prompt cap {max_words_per_prompt}"
        )
    if len(set(words)) != len(words):
        raise ValidationError("topic word list contains duplicates")

    before = topic_coherence(index, words)
    try:
        verdict = judge(words)
    except (TransportError, ResponseParseError) as exc:
        return CorrectionRecord(
            topic_index=topic_index,
            original_words=words,
            removed_words=[],
            kept_words=list(words),
            coherence_before=before,
            coherence_after=before,
            failed=True,
            error=str(exc),
        )

    if verdict.kind == "yes":
        return CorrectionRecord(
            topic_index=topic_index,
            original_words=words,
            removed_words=[],
            kept_words=list(words),
            coherence_before=before,
            coherence_after=before,
            raw_response=verdict.raw,
        )

    flagged = set(verdict.rejected_words)
    word_set = set(words)
    noise = [w for w in verdict.rejected_words if w not in word_set]
    removed = [w for w in words if w in flagged]

    truncated = False
    if len(words) - len(removed) < MIN_TOPIC_SIZE:
        # topic_words arrive ranked by topic weight, so restoring from the
        # front keeps the highest-weight flagged words
        shortfall = MIN_TOPIC_SIZE - (len(words) - len(removed))
        removed = removed[shortfall:]
        truncated = True
    removed_set = set(removed)
    kept = [w for w in words if w not in removed_set]

    return CorrectionRecord(
        topic_index=topic_index,
        original_words=words,
        removed_words=removed,
        kept_words=kept,
        noise_words=noise,
        coherence_before=before,
        coherence_after=topic_coherence(index, kept),
        truncated=truncated,
        raw_response=verdict.raw,
    )


def correct_model(
    model: TopicModel,
    index: CooccurrenceIndex,
    top_n: int,
    judge: CorrectionJudge,
    max_words_per_prompt: int = 20,
    fan_out: int = 4,
) -> tuple[list[CorrectionRecord], CorrectionSummary]:
    """Apply per-topic correction to every topic's top-n words."""
    if top_n < MIN_TOPIC_SIZE:
        raise ValidationError(f"top_n must be >= {MIN_TOPIC_SIZE}, got {top_n}")
    if top_n > max_words_per_prompt:
        raise ValidationError(
            f"top_n {top_n} exceeds the per-prompt cap {max_words_per_prompt}"
        )

    def run_one(t: int) -> CorrectionRecord:
        return correct_topic(
            top_words(model, t, top_n),
            judge,
            index,
            topic_index=t,
            max_words_per_prompt=max_words_per_prompt,
        )

    num_topics = model.num_topics
    if fan_out > 1 and num_topics > 1:
        with ThreadPoolExecutor(max_workers=min(fan_out, num_topics)) as pool:
            records = list(pool.map(run_one, range(num_topics)))
    else:
        records = [run_one(t) for t in range(num_topics)]

    return records, summarize(records)


def summarize(records: Sequence[CorrectionRecord]) -> CorrectionSummary:
    befores = [r.coherence_before for r in records if r.coherence_before is not None]
    afters = [r.coherence_after for r in records if r.coherence_after is not None]
    undefined = sum(1 for r in records if r.coherence_before is None)
    mean_before = float(np.mean(befores)) if befores else None
    mean_after = float(np.mean(afters)) if afters else None

    aggregate = None
    if mean_before is not None and mean_after is not None and mean_before != 0.0:
        aggregate = (mean_after - mean_before) / abs(mean_before)

    per_topic = [
        (r.coherence_after - r.coherence_before) / abs(r.coherence_before)
        for r in records
        if r.coherence_before not in (None, 0.0) and r.coherence_after is not None
    ]
    mean_relative = float(np.mean(per_topic)) if per_topic else None

    return CorrectionSummary(
        topics=len(records),
        failed_topics=sum(1 for r in records if r.failed),
        undefined_topics=undefined,
        mean_before=mean_before,
        mean_after=mean_after,
        aggregate_relative_improvement=aggregate,
        mean_relative_improvement=mean_relative,
    )


def write_correction_report(
    records: Sequence[CorrectionRecord],
    summary: CorrectionSummary,
    json_path: str,
    text_path: str | None = None,
) -> None:
    """Emit the JSON record array and a side-by-side original/filtered table."""
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"records": [r.to_dict() for r in records], "summary": summary.to_dict()},
            fh,
            ensure_ascii=False,
            indent=2,
        )
    if text_path is None:
        return
    lines = []
    for r in records:
        lines.append(f"topic {r.topic_index}")
        lines.append(f"  original: {', '.join(r.original_words)}")
        lines.append(f"  filtered: {', '.join(r.kept_words)}")
        if r.removed_words:
            lines.append(f"  removed:  {', '.join(r.removed_words)}")
        if r.failed:
            lines.append(f"  FAILED: {r.error}")
        before = "n/a" if r.coherence_before is None else f"{r.coherence_before:.4f}"
        after = "n/a" if r.coherence_after is None else f"{r.coherence_after:.4f}"
        lines.append(f"  coherence: {before} -> {after}")
        lines.append("")
    agg = summary.aggregate_relative_improvement
    lines.append(
        "aggregate relative improvement: "
        + ("n/a" if agg is None else f"{agg:.4%}")
    )
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
