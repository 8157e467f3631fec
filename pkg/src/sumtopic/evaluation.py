r"""Topic diversity and :math:`C_V` coherence.

Coherence is always measured against the token streams of the full original corpus,
whatever text the topics were fit on. Probabilities are estimated with a boolean
sliding window: every window of ``window_size`` consecutive tokens of one document
counts each distinct term, and each distinct pair of terms, once. For a topic with
words :math:`W` every word gets the vector of its NPMI with all of :math:`W`,

.. math::

    \mathrm{NPMI}(a, b) = \frac{\ln \frac{P(a, b) + \epsilon}{P(a) P(b)}}
                               {-\ln (P(a, b) + \epsilon)}

and the topic's coherence is the mean cosine between each word vector and their sum.
"""
from __future__ import annotations
import csv
import logging
import math
from collections import Counter
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import torch

from sumtopic.configuration import InputType
from sumtopic.corpus import Corpus, tokenize
from sumtopic.topics import TopicModel

__all__ = [
    "WindowStats",
    "MetricsRecord",
    "RECORD_COLUMNS",
    "token_streams",
    "topic_diversity",
    "build_window_stats",
    "npmi",
    "npmi_matrix",
    "cv_coherence",
    "evaluate",
    "degenerate_record",
    "write_records_csv",
    "read_records_csv",
]

EPSILON = 1e-12


class WindowStats(NamedTuple):
    """Boolean sliding-window counts.

    Args:
        window_size (int): Tokens per window.
        n_windows (int): Windows over the whole corpus.
        occurrence (dict[str, int]): Windows containing each term.
        cooccurrence (dict[tuple[str, str], int]): Windows containing both terms of
          each pair, keyed by the lexicographically ordered pair.
        terms (frozenset[str], optional): The counted terms, or ``None`` when every
          term of the corpus was counted.
        epsilon (float): Smoothing inside the NPMI logarithm.
    """

    window_size: int
    n_windows: int
    occurrence: dict[str, int]
    cooccurrence: dict[tuple[str, str], int]
    terms: Optional[frozenset[str]] = None
    epsilon: float = EPSILON

    def covers(self, term: str) -> bool:
        return self.terms is None or term in self.terms

    def count(self, a: str, b: Optional[str] = None) -> int:
        """Windows containing ``a``, or both ``a`` and ``b``."""
        if b is None or a == b:
            return self.occurrence.get(a, 0)
        return self.cooccurrence.get((a, b) if a < b else (b, a), 0)


class MetricsRecord(NamedTuple):
    """The outcome of one grid run. ``diversity`` and ``coherence_cv`` are ``None``
    exactly when the run is degenerate.
    """

    dataset: str
    input_type: InputType
    diversity_param: float
    min_topic_size: int
    seed: int
    n_topics: int
    diversity: Optional[float]
    coherence_cv: Optional[float]
    degenerate: bool
    n_unknown_terms: int = 0
    reference: str = "full"
    error: str = ""


RECORD_COLUMNS = MetricsRecord._fields


def token_streams(corpus: Corpus, stopwords: Optional[frozenset[str]] = None) -> list[list[str]]:
    return [tokenize(text, stopwords) for text in corpus.texts]


def topic_diversity(keyword_lists: Sequence[Sequence[str]]) -> float:
    """Distinct keywords over all keywords, e.g. ``|distinct| / (10 * n_topics)``
    for top-10 lists.

    Raises:
        ValueError: If there is no topic or no keyword.
    """
    total = sum(len(kw) for kw in keyword_lists)
    if not keyword_lists or total == 0:
        raise ValueError("Topic diversity needs at least one non-empty topic")
    return len({w for kw in keyword_lists for w in kw}) / total


def _window_matrix(stream: Sequence[str], terms: list[str], window_size: int) -> torch.Tensor:
    """Boolean ``(len(terms), n_windows)`` presence matrix of one document."""
    n_windows = max(1, len(stream) - window_size + 1)
    index = {t: i for i, t in enumerate(terms)}
    diff = torch.zeros((len(terms), n_windows + 1), dtype=torch.int64)
    rows, starts, stops = [], [], []
    for p, token in enumerate(stream):
        if token in index:
            rows.append(index[token])
            starts.append(min(max(0, p - window_size + 1), n_windows - 1))
            stops.append(min(p, n_windows - 1) + 1)
    r = torch.tensor(rows, dtype=torch.long)
    ones = torch.ones(len(rows), dtype=torch.int64)
    diff.index_put_((r, torch.tensor(starts, dtype=torch.long)), ones, accumulate=True)
    diff.index_put_((r, torch.tensor(stops, dtype=torch.long)), -ones, accumulate=True)
    return torch.cumsum(diff, dim=1)[:, :n_windows] > 0


def build_window_stats(
    reference: Corpus | Sequence[Sequence[str]],
    window_size: int = 110,
    terms: Optional[Iterable[str]] = None,
    stopwords: Optional[frozenset[str]] = None,
) -> WindowStats:
    """Counts windows over every document of ``reference``.

    A document with at least ``window_size`` tokens has one window per start
    position; a shorter non-empty document is a single window; an empty document has
    none. Windows never span documents.

    Args:
        reference (Corpus | Sequence[Sequence[str]]): A corpus, tokenized here, or
          its token streams from :func:`token_streams`.
        window_size (int): Tokens per window. Defaults to 110.
        terms (Iterable[str], optional): Restricts counting to these terms. Counting
          every term of a large corpus is quadratic in the window vocabulary.

    Raises:
        ValueError: If the reference is empty or ``window_size < 1``.
    """
    if window_size < 1:
        raise ValueError(f"window_size must be positive, got {window_size}")
    streams = token_streams(reference, stopwords) if isinstance(reference, Corpus) else reference
    if len(streams) == 0:
        raise ValueError("Cannot count windows over an empty corpus")
    wanted = None if terms is None else frozenset(terms)

    n_windows = 0
    occurrence: Counter[str] = Counter()
    cooccurrence: Counter[tuple[str, str]] = Counter()
    for stream in streams:
        if not stream:
            continue
        n_windows += max(1, len(stream) - window_size + 1)
        present = sorted(set(stream) if wanted is None else set(stream) & wanted)
        if not present:
            continue
        presence = _window_matrix(stream, present, window_size).to(torch.float64)
        counts = (presence @ presence.T).tolist()
        for i, a in enumerate(present):
            occurrence[a] += int(counts[i][i])
            for j in range(i + 1, len(present)):
                c = int(counts[i][j])
                if c:
                    cooccurrence[(a, present[j])] += c

    return WindowStats(
        window_size=window_size,
        n_windows=n_windows,
        occurrence=dict(occurrence),
        cooccurrence=dict(cooccurrence),
        terms=wanted,
    )


def npmi(p_a: float, p_b: float, p_ab: float, epsilon: float = EPSILON) -> float:
    """Normalized pointwise mutual information from window probabilities.

    A term that never occurs yields -1. Terms present in every window together yield
    1, the limit the formula approaches.
    """
    if p_a <= 0 or p_b <= 0:
        return -1.0
    denominator = -math.log(p_ab + epsilon)
    if denominator <= 0:
        return 1.0
    return math.log((p_ab + epsilon) / (p_a * p_b)) / denominator


def npmi_matrix(words: Sequence[str], stats: WindowStats) -> torch.Tensor:
    """Pairwise NPMI of ``words``, the diagonal using ``P(w, w) = P(w)``."""
    n = max(stats.n_windows, 1)
    out = torch.empty((len(words), len(words)), dtype=torch.float64)
    for i, a in enumerate(words):
        for j in range(i, len(words)):
            b = words[j]
            value = npmi(stats.count(a) / n, stats.count(b) / n, stats.count(a, b) / n, stats.epsilon)
            out[i, j] = out[j, i] = value
    return out


def _topic_coherence(words: Sequence[str], stats: WindowStats) -> float:
    vectors = npmi_matrix(words, stats)
    total = vectors.sum(dim=0)
    total_norm = torch.linalg.vector_norm(total)
    confirmations = []
    for v in vectors:
        norm = torch.linalg.vector_norm(v)
        if norm == 0 or total_norm == 0:
            confirmations.append(0.0)
        else:
            confirmations.append(float(torch.dot(v, total) / (norm * total_norm)))
    return sum(confirmations) / len(confirmations)


def cv_coherence(keyword_lists: Sequence[Sequence[str]], stats: WindowStats) -> float:
    """Mean :math:`C_V` coherence over topics.

    Raises:
        ValueError: If there is no topic, a topic has no keyword, or ``stats`` was
          restricted to terms that leave out a keyword.
    """
    if not keyword_lists:
        raise ValueError("Coherence needs at least one topic")
    empty = [i for i, kw in enumerate(keyword_lists) if not kw]
    if empty:
        raise ValueError(f"Topics {empty[:5]} have no keywords")
    missing = sorted({w for kw in keyword_lists for w in kw if not stats.covers(w)})
    if missing:
        raise ValueError(f"Window statistics do not cover keywords {missing[:5]}")
    scores = [_topic_coherence(list(kw), stats) for kw in keyword_lists]
    return sum(scores) / len(scores)


def degenerate_record(
    dataset: str,
    input_type: InputType,
    diversity_param: float,
    min_topic_size: int,
    seed: int,
    error: str = "",
) -> MetricsRecord:
    return MetricsRecord(
        dataset=dataset,
        input_type=input_type,
        diversity_param=diversity_param,
        min_topic_size=min_topic_size,
        seed=seed,
        n_topics=0,
        diversity=None,
        coherence_cv=None,
        degenerate=True,
        error=error,
    )


def evaluate(
    topics: Optional[TopicModel],
    reference_corpus: Corpus,
    stats: Optional[WindowStats] = None,
    *,
    dataset: str = "",
    input_type: InputType = "full",
    diversity_param: Optional[float] = None,
    min_topic_size: Optional[int] = None,
    seed: Optional[int] = None,
    window_size: int = 110,
    streams: Optional[Sequence[Sequence[str]]] = None,
) -> MetricsRecord:
    """Scores ``topics`` against the full original corpus.

    Parameters left as ``None`` are read from ``topics.params``. When ``stats`` is
    not given, windows are counted over ``reference_corpus`` (or its pre-tokenized
    ``streams``) for the model's keywords only. Keywords that never occur in the
    reference count as never-occurring terms and are reported in
    ``n_unknown_terms``.

    A model with no topic (or ``topics=None``) gives a degenerate record.
    """
    log = logging.getLogger("sumtopic.main")

    params = topics.params if topics is not None else {}
    if diversity_param is None:
        diversity_param = params.get("diversity")
    if min_topic_size is None and "hdbscan" in params:
        min_topic_size = params["hdbscan"]["min_cluster_size"]
    if seed is None:
        seed = params.get("seed")

    if topics is None or topics.n_topics == 0:
        return degenerate_record(dataset, input_type, diversity_param, min_topic_size, seed)

    keyword_lists = topics.keyword_lists
    keywords = {w for kw in keyword_lists for w in kw}
    if stats is None or not all(stats.covers(w) for w in keywords):
        stats = build_window_stats(
            streams if streams is not None else reference_corpus, window_size, keywords
        )
    unknown = sorted(w for w in keywords if stats.count(w) == 0)
    if unknown:
        log.warning(
            "%d keywords never occur in '%s': %s",
            len(unknown),
            reference_corpus.name,
            ", ".join(unknown[:10]),
        )

    return MetricsRecord(
        dataset=dataset,
        input_type=input_type,
        diversity_param=diversity_param,
        min_topic_size=min_topic_size,
        seed=seed,
        n_topics=topics.n_topics,
        diversity=topic_diversity(keyword_lists),
        coherence_cv=cv_coherence(keyword_lists, stats),
        degenerate=False,
        n_unknown_terms=len(unknown),
    )


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records_csv(records: Iterable[MetricsRecord], path: str | Path) -> Path:
    """Writes one row per record in :data:`RECORD_COLUMNS` order. Floats are written
    with full precision so means recomputed from the file are exact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for record in records:
            writer.writerow([_format(v) for v in record])
    return path


def read_records_csv(path: str | Path) -> list[MetricsRecord]:
    """Reads records written by :func:`write_records_csv`.

    Raises:
        ValueError: If the header does not match :data:`RECORD_COLUMNS`.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = tuple(next(reader, ()))
        if header != RECORD_COLUMNS:
            raise ValueError(f"Unexpected records header {header}")
        records = []
        for row in reader:
            values = dict(zip(header, row))
            records.append(
                MetricsRecord(
                    dataset=values["dataset"],
                    input_type=values["input_type"],
                    diversity_param=float(values["diversity_param"]),
                    min_topic_size=int(values["min_topic_size"]),
                    seed=int(values["seed"]),
                    n_topics=int(values["n_topics"]),
                    diversity=float(values["diversity"]) if values["diversity"] else None,
                    coherence_cv=float(values["coherence_cv"]) if values["coherence_cv"] else None,
                    degenerate=values["degenerate"] == "true",
                    n_unknown_terms=int(values["n_unknown_terms"]),
                    reference=values["reference"],
                    error=values["error"],
                )
            )
    return records
