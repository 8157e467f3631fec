"""Command line interface: ``sumtopic <command> [options]``.

Every command except ``report`` and ``synth`` reads a YAML or JSON config file (see
:func:`~sumtopic.configuration.loadConfig`). ``--offline`` replaces the network
providers by the extractive summarizer and the hashing embedder.
"""
from __future__ import annotations
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from sumtopic.cluster import HdbscanParams
from sumtopic.configuration import INPUT_TYPES, loadConfig
from sumtopic.corpus import build_vocabulary, corpus_stats, sample_corpus, save_corpus, save_vocabulary
from sumtopic.embed import make_embedding_provider
from sumtopic.evaluation import evaluate
from sumtopic.runner import (
    embeddings_for,
    load_dataset,
    regenerate_report,
    run_experiment,
    summarize_with_config,
)
from sumtopic.synthetic import make_planted_corpus
from sumtopic.topics import fit_topic_model, save_topic_model

__all__ = ["build_parser", "main"]


def _ingest(args) -> None:
    config = loadConfig(args.config)
    corpus = load_dataset(config)
    stats = corpus_stats(corpus, config.summarizer.truncation_limit)
    work = Path(config.output.work_dir)
    save_corpus(corpus, work / f"{corpus.name}.jsonl")
    vocab = build_vocabulary(corpus)
    save_vocabulary(vocab, work / f"{corpus.name}.vocab.json")
    print(
        f"{corpus.name}: {stats.n_documents} documents, {stats.n_labels} labels, "
        f"{len(vocab.terms)} terms, mean {stats.mean_words:.1f} words "
        f"(median {stats.median_words:g}, max {stats.max_words}), "
        f"{stats.fraction_truncated:.1%} longer than {config.summarizer.truncation_limit} words"
    )


def _summarize(args) -> None:
    config = loadConfig(args.config)
    corpus = load_dataset(config)
    if args.sample:
        corpus = sample_corpus(corpus, args.sample, args.seed)
    run = summarize_with_config(config, corpus, args.variant, args.offline)
    path = save_corpus(run.corpus, Path(config.output.work_dir) / f"{run.corpus.name}.jsonl")
    print(
        f"{run.corpus.name}: {len(run.records)} summaries, {run.n_provider_calls} provider "
        f"calls, {len(run.failures)} failures -> {path}"
    )


def _input_corpus(config, input_type: str, offline: bool):
    corpus = load_dataset(config)
    if input_type == "full":
        return corpus
    return summarize_with_config(config, corpus, input_type, offline).corpus


def _embed(args) -> None:
    config = loadConfig(args.config)
    corpus = _input_corpus(config, args.input, args.offline)
    provider = make_embedding_provider(config.embedder, args.offline)
    matrix = embeddings_for(config, corpus, provider, args.input)
    print(f"{corpus.name}: {len(matrix.doc_ids)} x {matrix.dim} embeddings ({matrix.provider_id})")


def _model(args) -> None:
    config = loadConfig(args.config)
    reference = load_dataset(config)
    corpus = _input_corpus(config, args.input, args.offline)
    provider = make_embedding_provider(config.embedder, args.offline)
    embeddings = embeddings_for(config, corpus, provider, args.input)
    model = fit_topic_model(
        corpus,
        embeddings,
        config.umap,
        HdbscanParams(args.min_topic_size, config.grid.min_samples),
        args.diversity,
        args.seed,
        provider,
        reference_corpus=reference,
        n_candidates=config.grid.n_candidates,
        top_k=config.grid.top_k,
    )
    out = args.out or Path(config.output.out_dir) / f"model-{args.input}.json"
    save_topic_model(model, out)
    record = evaluate(
        model,
        reference,
        dataset=config.grid.dataset_name,
        input_type=args.input,
        window_size=config.grid.window_size,
    )
    for topic in sorted(model.keywords):
        words = " ".join(t for t, _ in model.keywords[topic])
        print(f"{topic:3d} ({model.topic_sizes[topic]:5d}): {words}")
    print(f"diversity {record.diversity:.4f}, C_V {record.coherence_cv:.4f} -> {out}")


def _grid(args) -> None:
    config = loadConfig(args.config)
    result = run_experiment(config, offline=args.offline)
    for m in result.input_type_means:
        print(f"{m.input_type:6s} diversity {m.diversity} C_V {m.coherence_cv}")
    print(f"best input by diversity: {result.best_input_type('diversity')}")


def _report(args) -> None:
    result = regenerate_report(args.dir)
    print(f"{len(result.records)} records re-aggregated into {args.dir}")


def _synth(args) -> None:
    corpus = make_planted_corpus(
        args.n_docs, seed=args.seed, name=args.name, noise_fraction=args.noise
    )
    path = save_corpus(corpus, args.out)
    print(f"{corpus.n_documents} planted-topic documents -> {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sumtopic",
        description="Topic modeling on full texts and LLM summaries.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def with_config(name: str, help: str) -> argparse.ArgumentParser:
        p = commands.add_parser(name, help=help)
        p.add_argument("--config", required=True, type=Path, help="YAML or JSON config")
        p.add_argument("--offline", action="store_true", help="use offline providers")
        return p

    p = with_config("ingest", "load the dataset, report statistics, write its vocabulary")
    p.set_defaults(func=_ingest)

    p = with_config("summarize", "summarize the dataset into a derived corpus")
    p.add_argument("--variant", choices=("short", "long"), required=True)
    p.add_argument("--sample", type=int, default=0, help="summarize a pilot sample only")
    p.add_argument("--seed", type=int, default=0, help="seed of the pilot sample")
    p.set_defaults(func=_summarize)

    p = with_config("embed", "embed one input type")
    p.add_argument("--input", choices=INPUT_TYPES, default="full")
    p.set_defaults(func=_embed)

    p = with_config("model", "fit and score a single topic model")
    p.add_argument("--input", choices=INPUT_TYPES, default="full")
    p.add_argument("--diversity", type=float, default=0.1)
    p.add_argument("--min-topic-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="model JSON path")
    p.set_defaults(func=_model)

    p = with_config("grid", "run the experiment grid and write the report")
    p.set_defaults(func=_grid)

    p = commands.add_parser("report", help="regenerate tables and charts of a finished grid")
    p.add_argument("--dir", required=True, type=Path, help="grid output directory")
    p.set_defaults(func=_report)

    p = commands.add_parser("synth", help="write a planted-topic corpus as JSONL")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-docs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.2, help="share of filler words")
    p.add_argument("--name", default="planted")
    p.set_defaults(func=_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        args.func(args)
    except Exception as e:
        logging.getLogger("sumtopic.main").debug("Command failed", exc_info=True)
        print(f"sumtopic {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
