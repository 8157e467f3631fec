"""The experiment grid: every combination of input type, MMR diversity and minimum
topic size, repeated with consecutive seeds, scored against the full corpus, and
summarized into CSV tables and SVG charts.
"""
from __future__ import annotations
import csv
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from importlib import metadata
from itertools import product
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import torch

from sumtopic.cluster import HdbscanParams
from sumtopic.configuration import (
    INPUT_TYPES,
    Config,
    GridConfig,
    InputType,
    default_min_topic_sizes,
)
from sumtopic.corpus import Corpus, load_corpus
from sumtopic.embed import (
    EmbeddingMatrix,
    EmbeddingProvider,
    corpus_hash,
    embed_corpus,
    load_embeddings,
    make_embedding_provider,
)
from sumtopic.evaluation import (
    MetricsRecord,
    degenerate_record,
    evaluate,
    read_records_csv,
    token_streams,
    write_records_csv,
)
from sumtopic.reduce import ReducedMatrix, UmapParams, umap_fit_transform
from sumtopic.summarize import (
    SummaryCache,
    SummaryRun,
    get_variant,
    load_template,
    make_completion_provider,
    summarize_corpus,
)
from sumtopic.svgchart import line_chart
from sumtopic.topics import DegenerateModelError, fit_topic_model, params_fingerprint

__all__ = [
    "CellMean",
    "InputTypeMean",
    "GridResult",
    "run_grid",
    "aggregate",
    "emit_report",
    "regenerate_report",
    "load_dataset",
    "summarize_with_config",
    "embeddings_for",
    "run_experiment",
]

SUMMARY_COLUMNS = (
    "scope",
    "input_type",
    "diversity_param",
    "min_topic_size",
    "n_runs",
    "n_excluded",
    "diversity",
    "coherence_cv",
    "diversity_min",
    "diversity_max",
    "coherence_min",
    "coherence_max",
)


class CellMean(NamedTuple):
    """Means over the non-degenerate repeats of one combination. The metrics are
    ``None`` when every repeat was degenerate.
    """

    input_type: InputType
    diversity_param: float
    min_topic_size: int
    n_runs: int
    n_excluded: int
    diversity: Optional[float]
    coherence_cv: Optional[float]

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)

    @property
    def undefined(self) -> bool:
        return self.n_runs == self.n_excluded


class InputTypeMean(NamedTuple):
    """Mean of an input type's defined cell means, with the spread of those cell
    means.
    """

    input_type: InputType
    n_cells: int
    n_excluded: int
    diversity: Optional[float]
    coherence_cv: Optional[float]
    diversity_min: Optional[float]
    diversity_max: Optional[float]
    coherence_min: Optional[float]
    coherence_max: Optional[float]

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)


class GridResult(NamedTuple):
    """Records of a grid run and their aggregates.

    Args:
        dataset (str): The dataset name.
        records (tuple[MetricsRecord, ...]): One per combination and repeat, in
          ``(input_type, diversity, min_topic_size, repeat)`` order.
        cell_means (tuple[CellMean, ...]): In the same combination order.
        input_type_means (tuple[InputTypeMean, ...]): In input type order.
        timings (dict[str, float]): Wall-clock seconds per run.
    """

    dataset: str
    records: tuple[MetricsRecord, ...]
    cell_means: tuple[CellMean, ...]
    input_type_means: tuple[InputTypeMean, ...]
    timings: dict[str, float] = {}

    def best_input_type(self, metric: str = "diversity") -> Optional[InputType]:
        """The input type with the highest mean ``metric`` (``'diversity'`` or
        ``'coherence_cv'``), the first one on ties.
        """
        defined = [m for m in self.input_type_means if m[metric] is not None]
        if not defined:
            return None
        return max(defined, key=lambda m: m[metric]).input_type


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def aggregate(
    records: Sequence[MetricsRecord],
) -> tuple[tuple[CellMean, ...], tuple[InputTypeMean, ...]]:
    """Cell means over repeats and input-type means over cell means.

    Degenerate records are excluded from every mean and counted. Cells and input
    types keep the order in which they first appear in ``records``.

    Raises:
        ValueError: If there are no records.
    """
    log = logging.getLogger("sumtopic.main")

    if not records:
        raise ValueError("Cannot aggregate an empty record list")

    cells: dict[tuple, list[MetricsRecord]] = {}
    for r in records:
        cells.setdefault((r.input_type, r.diversity_param, r.min_topic_size), []).append(r)

    cell_means = []
    for (input_type, diversity_param, size), members in cells.items():
        ok = [r for r in members if not r.degenerate]
        cell = CellMean(
            input_type=input_type,
            diversity_param=diversity_param,
            min_topic_size=size,
            n_runs=len(members),
            n_excluded=len(members) - len(ok),
            diversity=_mean([r.diversity for r in ok]),
            coherence_cv=_mean([r.coherence_cv for r in ok]),
        )
        if cell.undefined:
            log.warning(
                "Every run of cell (%s, %g, %d) is degenerate", input_type, diversity_param, size
            )
        cell_means.append(cell)

    type_means = []
    for input_type in dict.fromkeys(c.input_type for c in cell_means):
        members = [c for c in cell_means if c.input_type == input_type]
        div = [c.diversity for c in members if not c.undefined]
        coh = [c.coherence_cv for c in members if not c.undefined]
        type_means.append(
            InputTypeMean(
                input_type=input_type,
                n_cells=len(members),
                n_excluded=sum(c.n_excluded for c in members),
                diversity=_mean(div),
                coherence_cv=_mean(coh),
                diversity_min=min(div, default=None),
                diversity_max=max(div, default=None),
                coherence_min=min(coh, default=None),
                coherence_max=max(coh, default=None),
            )
        )
    return tuple(cell_means), tuple(type_means)


def _run_one(
    input_type: InputType,
    diversity: float,
    min_topic_size: int,
    seed: int,
    *,
    config: GridConfig,
    corpora: dict[str, Corpus],
    embeddings: dict[str, EmbeddingMatrix],
    reference: Corpus,
    streams: list[list[str]],
    umap_params: UmapParams,
    term_provider: EmbeddingProvider,
    reduce_for: Callable[[str, int], ReducedMatrix],
) -> tuple[MetricsRecord, float]:
    log = logging.getLogger("sumtopic.main")

    start = time.perf_counter()
    context = dict(
        dataset=config.dataset_name,
        input_type=input_type,
        diversity_param=diversity,
        min_topic_size=min_topic_size,
        seed=seed,
    )
    try:
        model = fit_topic_model(
            corpora[input_type],
            embeddings[input_type],
            umap_params,
            HdbscanParams(min_topic_size, config.min_samples),
            diversity,
            seed,
            term_provider,
            reference_corpus=reference,
            n_candidates=config.n_candidates,
            top_k=config.top_k,
            reduced=reduce_for(input_type, seed),
        )
        record = evaluate(
            model, reference, window_size=config.window_size, streams=streams, **context
        )
    except DegenerateModelError as e:
        log.warning("Degenerate run %s: %s", context, e)
        record = degenerate_record(**context, error=str(e))
    except (ValueError, RuntimeError) as e:
        log.warning("Run %s failed: %s", context, e)
        record = degenerate_record(**context, error=f"{type(e).__name__}: {e}")
    return record, time.perf_counter() - start


def run_grid(
    config: GridConfig,
    corpus: Corpus,
    summaries: dict[str, Corpus],
    provider: EmbeddingProvider,
    umap_params: UmapParams = UmapParams(),
    embeddings: Optional[dict[str, EmbeddingMatrix]] = None,
    batch_size: int = 64,
    concurrency_limit: int = 2,
) -> GridResult:
    """Runs every combination of the grid ``repeats`` times.

    Each run fits a topic model on its input (the full corpus or a summary corpus)
    with seed ``base_seed + repeat`` and scores it against the full ``corpus``.
    Embeddings are computed once per input and reduced once per input and seed.
    Failed runs become degenerate records and the grid continues. Runs execute on
    ``config.workers`` threads; records are always returned in combination order.

    Args:
        config (GridConfig): The grid. An empty ``min_topic_sizes`` is replaced by
          :func:`~sumtopic.configuration.default_min_topic_sizes`.
        corpus (Corpus): The full original corpus.
        summaries (dict[str, Corpus]): Summary corpora keyed ``'short'``/``'long'``.
        provider (EmbeddingProvider): Embeds documents and keyword candidates.
        umap_params (UmapParams): Reduction settings; seeds are set per run.
        embeddings (dict[str, EmbeddingMatrix], optional): Precomputed embeddings
          per input type; missing ones are computed.

    Raises:
        ValueError: If the grid is invalid or a requested summary corpus is missing
          or not aligned with ``corpus``.
    """
    log = logging.getLogger("sumtopic.main")

    if not config.min_topic_sizes:
        sizes = default_min_topic_sizes(corpus.n_documents)
        log.warning(
            "No grid.min_topic_sizes configured; using defaults %s for %d documents",
            list(sizes),
            corpus.n_documents,
        )
        config = config._replace(min_topic_sizes=sizes)
    if not config.dataset_name:
        config = config._replace(dataset_name=corpus.name)
    config.validate()

    corpora: dict[str, Corpus] = {"full": corpus}
    for input_type in config.input_types:
        if input_type == "full":
            continue
        if input_type not in summaries:
            raise ValueError(f"No summary corpus for input type '{input_type}'")
        if summaries[input_type].ids != corpus.ids:
            raise ValueError(f"Summary corpus '{input_type}' is not aligned with the corpus")
        corpora[input_type] = summaries[input_type]

    embeddings = dict(embeddings or {})
    for input_type in config.input_types:
        if input_type not in embeddings:
            embeddings[input_type] = embed_corpus(
                corpora[input_type], provider, batch_size, concurrency_limit
            )

    streams = token_streams(corpus)

    @lru_cache(maxsize=None)
    def reduce_for(input_type: str, seed: int) -> ReducedMatrix:
        # one reduction per input and seed, shared by every diversity and topic size
        matrix = embeddings[input_type]
        return umap_fit_transform(matrix.rows, umap_params._replace(seed=seed), matrix.doc_ids)

    runs = [
        (t, d, m, config.base_seed + r)
        for t, d, m, r in product(
            config.input_types,
            config.diversity_values,
            config.min_topic_sizes,
            range(config.repeats),
        )
    ]
    log.info("Running %d topic models on '%s'", len(runs), config.dataset_name)

    def work(run):
        return _run_one(
            *run,
            config=config,
            corpora=corpora,
            embeddings=embeddings,
            reference=corpus,
            streams=streams,
            umap_params=umap_params,
            term_provider=provider,
            reduce_for=reduce_for,
        )

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, runs))
    else:
        results = [work(run) for run in runs]

    records = tuple(record for record, _ in results)
    timings = {
        f"{t}/d={d:g}/m={m}/seed={s}": elapsed for (t, d, m, s), (_, elapsed) in zip(runs, results)
    }
    cell_means, type_means = aggregate(records)
    result = GridResult(config.dataset_name, records, cell_means, type_means, timings)
    log.info(
        "Grid done: %d records, %d degenerate; best input by diversity: %s",
        len(records),
        sum(r.degenerate for r in records),
        result.best_input_type("diversity"),
    )
    return result


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_summary(result: GridResult, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for c in result.cell_means:
            writer.writerow(
                [_cell(v) for v in ("cell", c.input_type, c.diversity_param, c.min_topic_size,
                                    c.n_runs, c.n_excluded, c.diversity, c.coherence_cv)]
                + [""] * 4
            )
        for m in result.input_type_means:
            writer.writerow(
                [_cell(v) for v in ("input_type", m.input_type, None, None, m.n_cells,
                                    m.n_excluded, m.diversity, m.coherence_cv, m.diversity_min,
                                    m.diversity_max, m.coherence_min, m.coherence_max)]
            )


def _chart(result: GridResult, metric: str, title: str) -> str:
    combos = list(dict.fromkeys((c.diversity_param, c.min_topic_size) for c in result.cell_means))
    labels = [f"d={d:g}, m={m}" for d, m in combos]
    by_key = {(c.input_type, c.diversity_param, c.min_topic_size): c for c in result.cell_means}
    series = {}
    for input_type in dict.fromkeys(c.input_type for c in result.cell_means):
        series[input_type] = [
            by_key[(input_type, d, m)][metric] if (input_type, d, m) in by_key else None
            for d, m in combos
        ]
    return line_chart(series, labels, f"{result.dataset}: {title}", title)


def emit_report(
    result: GridResult, out_dir: str | Path, manifest: Optional[dict] = None
) -> list[Path]:
    """Writes ``records.csv``, ``summary.csv``, ``diversity.svg``,
    ``coherence.svg`` and, when given, ``run-manifest.json`` into ``out_dir``.

    Raises:
        ValueError: If ``result`` has no records.
        OSError: If ``out_dir`` cannot be written.
    """
    log = logging.getLogger("sumtopic.main")

    if not result.records:
        raise ValueError("Cannot report an empty grid result")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = [write_records_csv(result.records, out_dir / "records.csv")]
    summary = out_dir / "summary.csv"
    _write_summary(result, summary)
    paths.append(summary)
    for name, metric, title in (
        ("diversity.svg", "diversity", "Topic diversity"),
        ("coherence.svg", "coherence_cv", "C_V coherence"),
    ):
        path = out_dir / name
        path.write_text(_chart(result, metric, title), encoding="utf-8")
        paths.append(path)
    if manifest is not None:
        path = out_dir / "run-manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        paths.append(path)

    log.info("Wrote %d report files to %s", len(paths), out_dir)
    return paths


def regenerate_report(out_dir: str | Path) -> GridResult:
    """Re-aggregates ``records.csv`` of a finished grid and rewrites its tables and
    charts; ``run-manifest.json`` is left as it is.

    Raises:
        FileNotFoundError: If ``out_dir`` has no ``records.csv``.
    """
    out_dir = Path(out_dir)
    records_path = out_dir / "records.csv"
    if not records_path.exists():
        raise FileNotFoundError(f"No records.csv in {out_dir}")
    records = tuple(read_records_csv(records_path))
    if not records:
        raise ValueError(f"{records_path} has no records")
    cell_means, type_means = aggregate(records)
    result = GridResult(records[0].dataset, records, cell_means, type_means)
    emit_report(result, out_dir)
    return result


def _version(package: str) -> str:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return "unknown"


def load_dataset(config: Config) -> Corpus:
    ds = config.dataset
    return load_corpus(ds.path, ds.format, ds.text_field, ds.label_field, name=ds.name)


def summarize_with_config(
    config: Config, corpus: Corpus, kind: str, offline: bool = False
) -> SummaryRun:
    """Summarizes ``corpus`` with the configured provider, template and cache."""
    provider = make_completion_provider(config.summarizer, offline)
    return summarize_corpus(
        corpus,
        provider,
        load_template(config.summarizer.template_path),
        get_variant(kind),
        truncation_limit=config.summarizer.truncation_limit,
        concurrency_limit=config.summarizer.concurrency_limit,
        cache=SummaryCache(config.output.cache_dir),
    )


def embeddings_for(
    config: Config, corpus: Corpus, provider: EmbeddingProvider, input_type: str
) -> EmbeddingMatrix:
    """Embeds ``corpus``, reusing the stored matrix of an identical earlier run."""
    log = logging.getLogger("sumtopic.main")

    path = Path(config.output.work_dir) / f"{config.dataset.name}-{input_type}.emb"
    if path.exists():
        stored = load_embeddings(path)
        if stored.provider_id == provider.provider_id and stored.corpus_hash == corpus_hash(corpus):
            log.info("Reusing embeddings from %s", path)
            return stored
    return embed_corpus(
        corpus,
        provider,
        config.embedder.batch_size,
        config.embedder.concurrency_limit,
        out_path=path,
    )


def run_experiment(config: Config, offline: bool = False) -> GridResult:
    """Loads the dataset, summarizes and embeds it as the grid needs, runs the grid
    and writes the report into ``config.output.out_dir``.

    With ``offline`` the extractive summarizer and the hashing embedder replace any
    network provider.
    """
    log = logging.getLogger("sumtopic.main")

    ds = config.dataset
    corpus = load_dataset(config)
    grid = config.grid

    summaries = {
        kind: summarize_with_config(config, corpus, kind, offline).corpus
        for kind in INPUT_TYPES
        if kind != "full" and kind in grid.input_types
    }
    provider = make_embedding_provider(config.embedder, offline)
    corpora = {"full": corpus, **summaries}
    embeddings = {t: embeddings_for(config, corpora[t], provider, t) for t in grid.input_types}

    result = run_grid(grid, corpus, summaries, provider, config.umap, embeddings)
    manifest = {
        "dataset": ds.name,
        "n_documents": corpus.n_documents,
        "corpus_hash": corpus_hash(corpus),
        "config_fingerprint": params_fingerprint(**config._asdict()),
        "umap": dict(config.umap._asdict()),
        "providers": {
            "summarizer": make_completion_provider(config.summarizer, offline).provider_id,
            "embedder": provider.provider_id,
        },
        "offline": offline,
        "best_input_type": {
            "diversity": result.best_input_type("diversity"),
            "coherence_cv": result.best_input_type("coherence_cv"),
        },
        "versions": {
            "sumtopic": _version("sumtopic"),
            "torch": torch.__version__,
            "python": platform.python_version(),
        },
        "timings": result.timings,
    }
    emit_report(result, config.output.out_dir, manifest)
    return result
