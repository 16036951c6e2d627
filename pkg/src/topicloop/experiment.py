"""Experiment grid: method x eta x seed comparisons, plus synthetic corpora.

The synthetic generator draws a corpus from the LDA generative process and
returns the generating model alongside, restricted to the words that actually
appear, so recovery can be scored against known ground truth at desk scale.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import Corpus, CooccurrenceIndex, build_cooccurrence, build_corpus, load_bundle
from .errors import DataError, ValidationError
from .initializers import (
    CoherenceJudge,
    cluster_init,
    embed_vocabulary,
    kmeans_cluster,
    llm_guided_init,
    random_init,
)
from .metrics import (
    EvalSnapshot,
    MetricReport,
    coherence_detail,
    corpus_perplexity,
    descent_rate,
    reports_to_csv,
)
from .sampler import Hyperparams, TopicModel, estimate, gibbs_pass, init_state, top_words

logger = logging.getLogger(__name__)

# Hungarian matching is exact but cubic; past this many topics fall back to
# greedy matching.
_HUNGARIAN_LIMIT = 16

METHODS = ("random", "cluster", "llm")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the LDA generative process for a synthetic corpus."""

    num_topics: int
    vocab_size: int
    num_docs: int
    tokens_per_doc: int
    alpha: float
    beta: float
    seed: int

    def __post_init__(self):
        if min(self.num_topics, self.vocab_size, self.num_docs, self.tokens_per_doc) < 1:
            raise ValidationError("synthetic spec dimensions must be positive")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("synthetic spec priors must be positive")
        if self.num_topics > self.vocab_size:
            raise ValidationError("num_topics cannot exceed vocab_size")


def generate_synthetic(spec: SyntheticSpec) -> tuple[Corpus, TopicModel]:
    """Draw a corpus from LDA and return it with its generating model.

    Words that are never sampled cannot enter the vocabulary, so the returned
    truth has its phi columns restricted to realized words and renormalized;
    with sparse topic-word priors the dropped mass is negligible.
    """
    rng = np.random.default_rng(spec.seed)
    phi_true = rng.dirichlet([spec.beta] * spec.vocab_size, size=spec.num_topics)
    theta_true = rng.dirichlet([spec.alpha] * spec.num_topics, size=spec.num_docs)

    width = len(str(spec.vocab_size - 1))
    raw_docs = []
    for d in range(spec.num_docs):
        labels = rng.choice(spec.num_topics, size=spec.tokens_per_doc, p=theta_true[d])
        word_ids = np.empty(spec.tokens_per_doc, dtype=np.int64)
        for t in np.unique(labels):
            mask = labels == t
            word_ids[mask] = rng.choice(spec.vocab_size, size=int(mask.sum()), p=phi_true[t])
        raw_docs.append((f"doc{d}", [f"w{i:0{width}d}" for i in word_ids]))

    corpus = build_corpus(raw_docs, min_count=1)
    realized = np.array([int(w[1:]) for w in corpus.vocabulary.words], dtype=np.int64)
    phi = phi_true[:, realized]
    phi = phi / phi.sum(axis=1, keepdims=True)
    truth = TopicModel(theta=theta_true, phi=phi, vocabulary=corpus.vocabulary.words)
    return corpus, truth


def match_topics(
    estimated: TopicModel, truth: TopicModel
) -> tuple[list[int], float]:
    """Match estimated topics to true ones minimizing total variation.

    Returns the per-estimated-topic assignment of truth columns and the mean
    total-variation distance over matched pairs.
    """
    if estimated.phi.shape != truth.phi.shape:
        raise ValidationError(
            f"model shapes differ: {estimated.phi.shape} vs {truth.phi.shape}"
        )
    num_topics = estimated.num_topics
    cost = 0.5 * np.abs(estimated.phi[:, None, :] - truth.phi[None, :, :]).sum(axis=2)
    if num_topics <= _HUNGARIAN_LIMIT:
        rows, cols = linear_sum_assignment(cost)
        assignment = [int(cols[list(rows).index(i)]) for i in range(num_topics)]
    else:
        assignment = [-1] * num_topics
        remaining = set(range(num_topics))
        masked = cost.copy()
        for _ in range(num_topics):
            i, j = np.unravel_index(int(np.argmin(masked)), masked.shape)
            assignment[int(i)] = int(j)
            remaining.discard(int(j))
            masked[i, :] = np.inf
            masked[:, j] = np.inf
    mean_tv = float(np.mean([cost[i, assignment[i]] for i in range(num_topics)]))
    return assignment, mean_tv


def _parse_eta_mode(mode) -> tuple[str, float | None]:
    """An eta mode is "auto" (prior 1/T) or a positive number."""
    if isinstance(mode, str):
        if mode == "auto":
            return "auto", None
        try:
            value = float(mode)
        except ValueError as exc:
            raise ValidationError(f"eta mode must be 'auto' or a number, got {mode!r}") from exc
    else:
        value = float(mode)
    if value <= 0:
        raise ValidationError(f"eta must be positive, got {value}")
    return str(value), value


@dataclass
class ExperimentConfig:
    """The comparison grid: methods x eta modes x seeds on one corpus."""

    num_topics: int
    corpus_path: str | None = None
    synthetic: SyntheticSpec | None = None
    alpha: float = 0.1
    eta_modes: list = field(default_factory=lambda: ["auto", 0.1])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    passes: int = 20
    eval_passes: list[int] = field(default_factory=lambda: [0, 20])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    embedding_dim: int = 16
    coherence_threshold: float = 0.5
    top_n: int = 10
    max_words_per_prompt: int = 20
    post_correct: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.num_topics < 1:
            raise ValidationError("num_topics must be >= 1")
        if not self.methods:
            raise ValidationError("methods must not be empty")
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"unknown method {m!r}; expected one of {METHODS}")
        if not self.seeds:
            raise ValidationError("seeds must not be empty")
        if self.passes < 0:
            raise ValidationError("passes must be >= 0")
        for p in self.eval_passes:
            if not 0 <= p <= self.passes:
                raise ValidationError(f"eval pass {p} outside [0, {self.passes}]")
        for mode in self.eta_modes:
            _parse_eta_mode(mode)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        synthetic = obj.pop("synthetic", None)
        if synthetic is not None:
            synthetic = SyntheticSpec(**synthetic)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"unknown experiment config fields: {sorted(unknown)}")
        return cls(synthetic=synthetic, **obj)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        text_path = Path(path)
        try:
            if text_path.suffix == ".toml":
                import tomli

                obj = tomli.loads(text_path.read_text("utf-8"))
            else:
                obj = json.loads(text_path.read_text("utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read experiment config {path}: {exc}") from exc
        except ValueError as exc:
            raise DataError(f"malformed experiment config {path}: {exc}") from exc
        try:
            return cls.from_dict(obj)
        except TypeError as exc:
            raise DataError(f"invalid experiment config {path}: {exc}") from exc


@dataclass
class CellResult:
    method: str
    eta_mode: str
    seed: int
    report: MetricReport | None = None
    error: str | None = None
    final_model: TopicModel | None = None  # retained only when requested

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.method, self.eta_mode, self.seed)


@dataclass
class GridResult:
    cells: list[CellResult]

    def reports(self) -> list[MetricReport]:
        return [c.report for c in self.cells if c.report is not None]

    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if c.error is not None]

    def write_outputs(self, out_dir: str) -> None:
        """Per-cell JSON reports plus merged CSV tables."""
        out = Path(out_dir)
        cell_dir = out / "cells"
        cell_dir.mkdir(parents=True, exist_ok=True)
        for cell in self.cells:
            name = f"{cell.method}_eta-{cell.eta_mode}_seed-{cell.seed}.json"
            payload = {
                "method": cell.method,
                "eta_mode": cell.eta_mode,
                "seed": cell.seed,
                "error": cell.error,
                "report": cell.report.to_dict() if cell.report else None,
            }
            (cell_dir / name).write_text(
                json.dumps(payload, ensure_ascii=False, indent=2), "utf-8"
            )
        reports = self.reports()
        (out / "perplexity.csv").write_text(reports_to_csv(reports, "perplexity"), "utf-8")
        (out / "coherence_mean_npmi.csv").write_text(
            reports_to_csv(reports, "coherence_mean"), "utf-8"
        )
        (out / "coherence_sum_npmi.csv").write_text(
            reports_to_csv(reports, "coherence_sum"), "utf-8"
        )
        (out / "cells.csv").write_text(self._cells_csv(), "utf-8")

    def _cells_csv(self) -> str:
        # one row per (cell, eval pass), per-seed values retained
        lines = ["method,eta,seed,pass,perplexity,coherence_mean_npmi,coherence_sum_npmi"]
        for cell in self.cells:
            if cell.report is None:
                continue
            for snap in cell.report.snapshots:
                mean = "" if snap.coherence_mean is None else repr(snap.coherence_mean)
                total = "" if snap.coherence_sum_mean is None else repr(snap.coherence_sum_mean)
                lines.append(
                    f"{cell.method},{cell.eta_mode},{cell.seed},{snap.pass_index},"
                    f"{snap.perplexity!r},{mean},{total}"
                )
        return "\n".join(lines) + "\n"


def resolve_corpus(config: ExperimentConfig) -> Corpus:
    if (config.corpus_path is None) == (config.synthetic is None):
        raise ValidationError("config needs exactly one of corpus_path or synthetic")
    if config.synthetic is not None:
        corpus, _ = generate_synthetic(config.synthetic)
        return corpus
    return load_bundle(config.corpus_path)


def _run_cell(
    corpus: Corpus,
    index: CooccurrenceIndex,
    config: ExperimentConfig,
    method: str,
    eta_mode: str,
    eta_value: float | None,
    seed: int,
    judge: CoherenceJudge | None,
    cluster_sets: dict,
    keep_model: bool = False,
) -> tuple[MetricReport, TopicModel | None]:
    hyper = Hyperparams(num_topics=config.num_topics, alpha=config.alpha, eta=eta_value)
    if method == "random":
        assignments = random_init(corpus, config.num_topics, seed)
    elif method == "cluster":
        assignments = cluster_init(corpus, cluster_sets[seed], seed)
    else:
        assignments, _ = llm_guided_init(
            corpus,
            cluster_sets[seed],
            judge,
            threshold=config.coherence_threshold,
            seed=seed,
            max_words_per_prompt=config.max_words_per_prompt,
        )

    state = init_state(corpus, assignments, hyper, seed)
    eval_passes = set(config.eval_passes)
    trace: list[tuple[int, float]] = []
    snapshots: list[EvalSnapshot] = []

    def record(pass_index: int) -> None:
        model = estimate(state)
        perplexity = corpus_perplexity(model, corpus)
        trace.append((pass_index, perplexity))
        if pass_index in eval_passes:
            details = [
                coherence_detail(index, top_words(model, t, config.top_n))
                for t in range(config.num_topics)
            ]
            means = [d.mean_npmi for d in details if d.mean_npmi is not None]
            sums = [d.sum_npmi for d in details if d.sum_npmi is not None]
            snapshots.append(
                EvalSnapshot(
                    pass_index=pass_index,
                    perplexity=perplexity,
                    coherence_per_topic=[d.mean_npmi for d in details],
                    coherence_mean=float(np.mean(means)) if means else None,
                    coherence_sum_mean=float(np.mean(sums)) if sums else None,
                    skipped_words=sum(len(d.skipped_words) for d in details),
                )
            )

    record(0)
    for p in range(1, config.passes + 1):
        gibbs_pass(state)
        record(p)

    values = [v for _, v in trace]
    descent = descent_rate(values) if len(values) >= 2 else None
    report = MetricReport(
        method=method,
        eta_mode=eta_mode,
        beta=hyper.beta,
        num_topics=config.num_topics,
        alpha=config.alpha,
        seed=seed,
        top_n=config.top_n,
        per_pass_perplexity=trace,
        descent_rates=descent.rates if descent else [],
        mean_descent_rate=descent.mean_rate if descent else None,
        snapshots=snapshots,
    )
    report.validate()
    return report, (estimate(state) if keep_model else None)


def run_grid(
    config: ExperimentConfig,
    corpus: Corpus | None = None,
    judge: CoherenceJudge | None = None,
    keep_models: bool = False,
) -> GridResult:
    """Run every (method, eta, seed) cell and collect per-cell reports.

    Cell failures are recorded and do not stop the remaining cells. The
    random method never touches the judge; cluster and llm share one k-means
    clustering per seed. ``keep_models`` retains each cell's final point
    estimates for downstream post-correction.
    """
    if corpus is None:
        corpus = resolve_corpus(config)
    if "llm" in config.methods and judge is None:
        raise ValidationError("the llm method needs a coherence judge (mock allowed)")
    index = build_cooccurrence(corpus)

    cluster_sets: dict[int, object] = {}
    if any(m in config.methods for m in ("cluster", "llm")):
        embeddings = embed_vocabulary(corpus, config.embedding_dim, index=index)
        for seed in config.seeds:
            cluster_sets[seed] = kmeans_cluster(embeddings, config.num_topics, seed)

    grid = [
        (method, mode, seed)
        for method in config.methods
        for mode in config.eta_modes
        for seed in config.seeds
    ]

    def run_one(item: tuple) -> CellResult:
        method, mode, seed = item
        eta_mode, eta_value = _parse_eta_mode(mode)
        try:
            report, model = _run_cell(
                corpus, index, config, method, eta_mode, eta_value, seed, judge,
                cluster_sets, keep_model=keep_models,
            )
            return CellResult(
                method=method, eta_mode=eta_mode, seed=seed, report=report,
                final_model=model,
            )
        except Exception as exc:  # keep remaining cells running
            logger.exception("grid cell %s failed", item)
            return CellResult(method=method, eta_mode=eta_mode, seed=seed, error=str(exc))

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            cells = list(pool.map(run_one, grid))
    else:
        cells = [run_one(item) for item in grid]
    return GridResult(cells=cells)
