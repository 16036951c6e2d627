"""Command-line pipeline: ingest, train, eval, postcorrect, experiment.

Exit codes: 0 success, 1 usage, 2 data, 3 transport. Every failure ends with
a single machine-parseable line on stderr of the form ``error[<class>]:
message``. All LLM-touching subcommands accept ``--mock-llm RULES.json`` so
they can run with no network and no model.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import initializers as init_mod
from . import metrics as metrics_mod
from . import post_correction as pc_mod
from . import sampler as sampler_mod
from .errors import (
    DataError,
    ResponseParseError,
    TransportError,
    ValidationError,
)
from .experiment import ExperimentConfig, resolve_corpus, run_grid
from .llm import LlmClient, client_from_env

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRANSPORT = 3

logger = logging.getLogger("topicloop")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own; route through our exit-code scheme instead
    def error(self, message):
        raise UsageError(message)


def _parse_eta(value: str) -> float | None:
    if value == "auto":
        return None
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"--eta must be 'auto' or a number, got {value!r}") from None


def _build_client(args) -> LlmClient:
    return client_from_env(
        mock_rules_path=getattr(args, "mock_llm", None),
        base_url=getattr(args, "llm_base_url", None),
        api_key=getattr(args, "llm_api_key", None),
        model=getattr(args, "llm_model", None),
    )


def _add_llm_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mock-llm", metavar="RULES.json",
                        help="answer LLM calls from a substring-rule file instead of the network")
    parser.add_argument("--llm-base-url", help="chat endpoint base URL (overrides env)")
    parser.add_argument("--llm-api-key", help="bearer token (overrides env)")
    parser.add_argument("--llm-model", help="model name (overrides env)")


def cmd_ingest(args) -> None:
    raw = corpus_mod.load_jsonl(args.input)
    stopwords = corpus_mod.load_stopwords(args.stopwords) if args.stopwords else frozenset()
    built = corpus_mod.build_corpus(raw, min_count=args.min_count, stopwords=stopwords)
    corpus_mod.save_bundle(built, args.output)
    print(f"ingested {built.num_docs} documents, vocabulary {len(built.vocabulary)}, "
          f"{built.total_tokens} tokens -> {args.output}")


def _initial_assignments(args, built, hyper):
    """Returns (assignments, annotated cluster set or None)."""
    if args.init == "random":
        return init_mod.random_init(built, hyper.num_topics, args.seed), None
    index = corpus_mod.build_cooccurrence(built)
    embeddings = init_mod.embed_vocabulary(built, args.embedding_dim, index=index)
    clusters = init_mod.kmeans_cluster(embeddings, hyper.num_topics, args.seed)
    if args.init == "cluster":
        return init_mod.cluster_init(built, clusters, args.seed), clusters
    client = _build_client(args)
    assignments, annotated = init_mod.llm_guided_init(
        built,
        clusters,
        client.evaluate_cluster_coherence,
        threshold=args.threshold,
        seed=args.seed,
        max_words_per_prompt=client.max_words_per_prompt,
    )
    return assignments, annotated


def cmd_train(args) -> None:
    built = corpus_mod.load_bundle(args.bundle)
    hyper = sampler_mod.Hyperparams(
        num_topics=args.num_topics, alpha=args.alpha, eta=_parse_eta(args.eta)
    )
    assignments, clusters = _initial_assignments(args, built, hyper)
    state = sampler_mod.init_state(built, assignments, hyper, args.seed)

    trace = [(0, metrics_mod.corpus_perplexity(sampler_mod.estimate(state), built))]
    for p in range(1, args.passes + 1):
        sampler_mod.gibbs_pass(state)
        trace.append((p, metrics_mod.corpus_perplexity(sampler_mod.estimate(state), built)))
        logger.info("pass %d perplexity %.4f", p, trace[-1][1])

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sampler_mod.save_checkpoint(state, str(out / "checkpoint.json"))
    meta = {
        "method": args.init,
        "eta_mode": hyper.eta_mode,
        "beta": hyper.beta,
        "alpha": hyper.alpha,
        "num_topics": hyper.num_topics,
        "seed": args.seed,
        "passes": args.passes,
    }
    sampler_mod.save_model(sampler_mod.estimate(state), str(out / "model.json"), meta=meta)
    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pass", "perplexity"])
        for p, v in trace:
            writer.writerow([p, repr(v)])
    if clusters is not None:
        (out / "clusters.json").write_text(
            json.dumps(init_mod.cluster_set_to_json(clusters, built), ensure_ascii=False, indent=2),
            "utf-8",
        )
    print(f"trained {args.passes} passes; final perplexity {trace[-1][1]:.4f} -> {out}")


def cmd_eval(args) -> None:
    built = corpus_mod.load_bundle(args.bundle)
    model, meta = sampler_mod.load_model(args.model)
    index = corpus_mod.build_cooccurrence(built)
    perplexity = metrics_mod.corpus_perplexity(model, built)
    details = [
        metrics_mod.coherence_detail(index, sampler_mod.top_words(model, t, args.top_n))
        for t in range(model.num_topics)
    ]
    means = [d.mean_npmi for d in details if d.mean_npmi is not None]
    sums = [d.sum_npmi for d in details if d.sum_npmi is not None]
    report = {
        "perplexity": perplexity,
        "top_n": args.top_n,
        "coherence_per_topic": [d.mean_npmi for d in details],
        "coherence_mean_npmi": sum(means) / len(means) if means else None,
        "coherence_sum_npmi": sum(sums) / len(sums) if sums else None,
        "skipped_words": sum(len(d.skipped_words) for d in details),
        "model_meta": meta,
    }
    Path(args.output).write_text(json.dumps(report, ensure_ascii=False, indent=2), "utf-8")
    print(f"perplexity {perplexity:.4f}, "
          f"mean NPMI {report['coherence_mean_npmi']} -> {args.output}")


def cmd_postcorrect(args) -> None:
    built = corpus_mod.load_bundle(args.bundle)
    model, _ = sampler_mod.load_model(args.model)
    index = corpus_mod.build_cooccurrence(built)
    client = _build_client(args)
    records, summary = pc_mod.correct_model(
        model, index, args.top_n, client.correct_words,
        max_words_per_prompt=client.max_words_per_prompt,
    )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pc_mod.write_correction_report(
        records, summary, str(out / "corrections.json"), str(out / "corrections.txt")
    )
    agg = summary.aggregate_relative_improvement
    print("post-correction: "
          f"{summary.topics} topics, {summary.failed_topics} failed, "
          f"aggregate improvement {'n/a' if agg is None else f'{agg:.4%}'} -> {out}")


def cmd_experiment(args) -> None:
    config = ExperimentConfig.from_file(args.config)
    if args.jobs is not None:
        config.jobs = args.jobs
    judge = None
    client = None
    if "llm" in config.methods or config.post_correct:
        client = _build_client(args)
        judge = client.evaluate_cluster_coherence
    built = resolve_corpus(config)
    result = run_grid(config, corpus=built, judge=judge, keep_models=config.post_correct)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.write_outputs(str(out))

    if config.post_correct and client is not None:
        index = corpus_mod.build_cooccurrence(built)
        correction_dir = out / "corrections"
        correction_dir.mkdir(exist_ok=True)
        for cell in result.cells:
            if cell.final_model is None:
                continue
            records, summary = pc_mod.correct_model(
                cell.final_model, index, config.top_n, client.correct_words,
                max_words_per_prompt=config.max_words_per_prompt,
            )
            stem = f"{cell.method}_eta-{cell.eta_mode}_seed-{cell.seed}"
            pc_mod.write_correction_report(
                records, summary,
                str(correction_dir / f"{stem}.json"),
                str(correction_dir / f"{stem}.txt"),
            )

    failed = result.failed()
    print(f"experiment grid: {len(result.cells)} cells, {len(failed)} failed -> {out}")
    if failed:
        for cell in failed:
            print(f"  failed cell {cell.key}: {cell.error}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topicloop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a corpus bundle from JSONL documents")
    p.add_argument("--input", required=True, help="JSONL file, one {id, tokens} object per line")
    p.add_argument("--output", required=True, help="corpus bundle path to write")
    p.add_argument("--min-count", type=int, default=5,
                   help="minimum document frequency to keep a word (default 5)")
    p.add_argument("--stopwords", help="stop-word file, one token per line")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="run the Gibbs sampler from a chosen initialization")
    p.add_argument("--bundle", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--num-topics", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--eta", default="auto", help="'auto' (1/T) or a positive number")
    p.add_argument("--init", choices=["random", "cluster", "llm"], default="random")
    p.add_argument("--passes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embedding-dim", type=int, default=16)
    p.add_argument("--threshold", type=float, default=0.5,
                   help="coherence acceptance threshold for --init llm")
    _add_llm_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model on a corpus bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--top-n", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("postcorrect", help="filter off-topic words from a trained model")
    p.add_argument("--bundle", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--top-n", type=int, default=10)
    _add_llm_flags(p)
    p.set_defaults(func=cmd_postcorrect)

    p = sub.add_parser("experiment", help="run a method x eta x seed comparison grid")
    p.add_argument("--config", required=True, help="experiment config (JSON or TOML)")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker pool size for grid cells")
    _add_llm_flags(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error[{kind}]: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except (ValidationError, DataError) as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except (TransportError, ResponseParseError) as exc:
        return _fail("transport", str(exc), EXIT_TRANSPORT)
    except OSError as exc:
        return _fail("data", str(exc), EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
