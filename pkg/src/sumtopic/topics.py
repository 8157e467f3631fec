r"""Topic representations.

Documents of each cluster are concatenated into one class document and weighted
with class-based TF-IDF,

.. math::

    W_{t,c} = tf_{t,c} \cdot \ln\left(1 + \frac{A}{f_t}\right)

where :math:`tf_{t,c}` counts term :math:`t` in class :math:`c`, :math:`f_t` counts
it over all classes and :math:`A` is the average number of tokens per class. The
best candidates of each class are then re-ranked with maximal marginal relevance,
where ``diversity`` weights redundancy against relevance to the topic centroid.
"""
from __future__ import annotations
import hashlib
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence

import torch

from sumtopic.cluster import ClusterLabels, HdbscanParams, hdbscan_fit
from sumtopic.corpus import Corpus, Vocabulary, build_vocabulary, tokenize
from sumtopic.embed import EmbeddingMatrix, EmbeddingProvider, cosine, embed_terms
from sumtopic.reduce import ReducedMatrix, UmapParams, umap_fit_transform

__all__ = [
    "DegenerateModelError",
    "TopicModel",
    "class_tfidf",
    "top_candidates",
    "mmr_rerank",
    "params_fingerprint",
    "fit_topic_model",
    "save_topic_model",
    "load_topic_model",
]

OUTLIER_TOPIC = -1


class DegenerateModelError(RuntimeError):
    """Raised when clustering leaves no topic besides the outliers."""


class TopicModel(NamedTuple):
    """A fitted topic model.

    Args:
        topic_ids (tuple[int, ...]): ``0..C-1``, followed by ``-1`` when some
          documents are outliers.
        doc_assignment (dict[str, int]): Topic of every document id.
        keywords (dict[int, tuple[tuple[str, float], ...]]): Ordered
          ``(term, weight)`` pairs of each non-outlier topic.
        topic_sizes (dict[int, int]): Documents per topic, outliers included.
        params (dict[str, Any]): Every parameter that produced the model.
        params_fingerprint (str): :func:`params_fingerprint` of ``params``.
        ctfidf (torch.Tensor, optional): Topic by term weights; not persisted.
        terms (tuple[str, ...]): Column terms of ``ctfidf``.
        unknown_terms (tuple[str, ...]): Keywords missing from the reference
          corpus vocabulary.
    """

    topic_ids: tuple[int, ...]
    doc_assignment: dict[str, int]
    keywords: dict[int, tuple[tuple[str, float], ...]]
    topic_sizes: dict[int, int]
    params: dict[str, Any]
    params_fingerprint: str
    ctfidf: Optional[torch.Tensor] = None
    terms: tuple[str, ...] = ()
    unknown_terms: tuple[str, ...] = ()

    @property
    def n_topics(self) -> int:
        return sum(1 for t in self.topic_ids if t != OUTLIER_TOPIC)

    @property
    def keyword_lists(self) -> list[list[str]]:
        return [[term for term, _ in self.keywords[t]] for t in sorted(self.keywords)]

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, weights rounded to 10 significant digits."""
        payload = {
            "params": _plain(self.params),
            "params_fingerprint": self.params_fingerprint,
            "doc_assignment": self.doc_assignment,
            "topics": [
                {
                    "id": t,
                    "size": self.topic_sizes.get(t, 0),
                    "keywords": [[term, _round(w)] for term, w in self.keywords.get(t, ())],
                }
                for t in self.topic_ids
            ],
            "unknown_terms": list(self.unknown_terms),
        }
        return json.dumps(payload, sort_keys=True, indent=1, ensure_ascii=False)


def _round(x: float) -> float:
    return float(f"{x:.10g}")


def _plain(value: Any) -> Any:
    if hasattr(value, "_asdict"):
        return {k: _plain(v) for k, v in value._asdict().items()}
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float):
        return _round(value)
    return value


def params_fingerprint(**params) -> str:
    """SHA-256 of the canonical JSON of ``params``; NamedTuples count as dicts."""
    text = json.dumps(_plain(params), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _label_list(labels: ClusterLabels | Sequence[int]) -> list[int]:
    if isinstance(labels, ClusterLabels):
        return [int(x) for x in labels.labels]
    return [int(x) for x in labels]


def class_tfidf(
    corpus: Corpus,
    labels: ClusterLabels | Sequence[int],
    vocab: Vocabulary,
    stopwords: Optional[frozenset[str]] = None,
) -> torch.Tensor:
    """Class-based TF-IDF weights of shape ``(n_clusters, len(vocab.terms))``.

    Outlier documents (label ``-1``) are left out of every count, as are tokens
    missing from ``vocab``.

    Raises:
        ValueError: If ``labels`` is not aligned with ``corpus``.
        DegenerateModelError: If no document belongs to a cluster.
    """
    label_list = _label_list(labels)
    if len(label_list) != corpus.n_documents:
        raise ValueError(
            f"{len(label_list)} labels for {corpus.n_documents} documents"
        )
    n_classes = max(label_list, default=-1) + 1
    if n_classes == 0:
        raise DegenerateModelError("No non-outlier cluster to weight")

    tf = torch.zeros((n_classes, len(vocab.terms)), dtype=torch.float64)
    for doc, label in zip(corpus.documents, label_list):
        if label == OUTLIER_TOPIC:
            continue
        counts = Counter(t for t in tokenize(doc.text, stopwords) if t in vocab.term_index)
        if counts:
            cols = torch.tensor([vocab.term_index[t] for t in counts])
            tf[label, cols] += torch.tensor(list(counts.values()), dtype=torch.float64)

    frequency = tf.sum(dim=0)
    average = float(tf.sum()) / n_classes
    idf = torch.where(
        frequency > 0,
        torch.log1p(average / torch.where(frequency > 0, frequency, torch.ones_like(frequency))),
        torch.zeros_like(frequency),
    )
    return tf * idf


def top_candidates(
    row: torch.Tensor, terms: Sequence[str], n_candidates: int = 30
) -> list[tuple[str, float]]:
    """The ``n_candidates`` terms of highest positive weight, ties in lexicographic
    order.

    Raises:
        ValueError: If ``row`` and ``terms`` differ in length or are empty.
    """
    if len(terms) != row.shape[0]:
        raise ValueError(f"{row.shape[0]} weights for {len(terms)} terms")
    if len(terms) == 0:
        raise ValueError("Cannot select candidates from an empty row")
    nonzero = [(terms[i], float(row[i])) for i in torch.nonzero(row > 0).flatten().tolist()]
    nonzero.sort(key=lambda tw: (-tw[1], tw[0]))
    return nonzero[:n_candidates]


def mmr_rerank(
    candidates: Sequence[str | tuple[str, float]],
    term_vectors: dict[str, torch.Tensor],
    topic_vector: torch.Tensor,
    diversity: float,
    top_k: int = 10,
) -> list[str]:
    """Greedy maximal marginal relevance.

    Each step picks the candidate maximizing
    ``(1 - diversity) * cos(w, topic) - diversity * max(cos(w, s) for s selected)``;
    the first pick is the most relevant candidate. Ties go to the earlier candidate.

    Raises:
        ValueError: If ``diversity`` is outside ``[0, 1]`` or a candidate has no
          vector.
    """
    if not 0.0 <= diversity <= 1.0:
        raise ValueError(f"diversity must be in [0, 1], got {diversity}")
    words = [c[0] if isinstance(c, tuple) else c for c in candidates]
    missing = [w for w in words if w not in term_vectors]
    if missing:
        raise ValueError(f"No vector for candidate terms {missing[:5]}")
    if not words or top_k < 1:
        return []

    relevance = [cosine(term_vectors[w], topic_vector) for w in words]
    remaining = list(range(len(words)))
    first = max(remaining, key=lambda i: (relevance[i], -i))
    selected = [first]
    remaining.remove(first)
    # running max similarity of every candidate to the selection
    redundancy = [cosine(term_vectors[words[i]], term_vectors[words[first]]) for i in range(len(words))]

    while remaining and len(selected) < top_k:
        best, best_score = None, None
        for i in remaining:
            score = (1.0 - diversity) * relevance[i] - diversity * redundancy[i]
            if best_score is None or score > best_score:
                best, best_score = i, score
        selected.append(best)
        remaining.remove(best)
        for i in remaining:
            redundancy[i] = max(redundancy[i], cosine(term_vectors[words[i]], term_vectors[words[best]]))
    return [words[i] for i in selected]


def fit_topic_model(
    model_input: Corpus,
    embeddings: EmbeddingMatrix,
    umap_params: UmapParams,
    hdbscan_params: HdbscanParams,
    diversity: float,
    seed: int,
    term_provider: EmbeddingProvider,
    reference_corpus: Optional[Corpus] = None,
    n_candidates: int = 30,
    top_k: int = 10,
    stopwords: Optional[frozenset[str]] = None,
    reduced: Optional[ReducedMatrix] = None,
) -> TopicModel:
    """Fits a topic model on ``model_input``.

    The embeddings are reduced (with ``seed``) and clustered; each cluster is
    described by its class-based TF-IDF candidates, re-ranked by MMR against the
    centroid of its members' embeddings. Term vectors come from ``term_provider``,
    normally the provider that embedded the documents.

    Args:
        model_input (Corpus): Full texts or a summary corpus.
        embeddings (EmbeddingMatrix): Embeddings of ``model_input``, row-aligned.
        umap_params (UmapParams): Reduction settings; ``seed`` replaces their seed.
        hdbscan_params (HdbscanParams): Clustering settings.
        diversity (float): MMR diversity in ``[0, 1]``.
        seed (int): Seed of the reduction.
        term_provider (EmbeddingProvider): Embeds single keyword candidates.
        reference_corpus (Corpus, optional): When given, keywords missing from its
          vocabulary are recorded in ``unknown_terms``.
        n_candidates (int): Candidate pool per topic. Defaults to 30.
        top_k (int): Keywords per topic. Defaults to 10.
        reduced (ReducedMatrix, optional): Coordinates already computed from
          ``embeddings`` with ``umap_params`` and ``seed``; the reduction is
          skipped when given.

    Raises:
        ValueError: If the embeddings or ``reduced`` are not aligned with
          ``model_input``.
        DegenerateModelError: If clustering finds no topic, or a topic has fewer
          than ``top_k`` keyword candidates.
    """
    log = logging.getLogger("sumtopic.main")

    if tuple(embeddings.doc_ids) != tuple(model_input.ids):
        raise ValueError(
            f"Embeddings ({len(embeddings.doc_ids)} rows) are not aligned with "
            f"corpus '{model_input.name}' ({model_input.n_documents} documents)"
        )
    umap_params = umap_params._replace(seed=seed)
    params = {
        "corpus": model_input.name,
        "corpus_hash": embeddings.corpus_hash,
        "embedding_provider": embeddings.provider_id,
        "term_provider": term_provider.provider_id,
        "umap": umap_params,
        "hdbscan": hdbscan_params,
        "diversity": diversity,
        "seed": seed,
        "n_candidates": n_candidates,
        "top_k": top_k,
    }
    fingerprint = params_fingerprint(**params)

    if reduced is None:
        reduced = umap_fit_transform(embeddings.rows, umap_params, embeddings.doc_ids)
    elif tuple(reduced.doc_ids) != tuple(model_input.ids):
        raise ValueError(f"Reduced coordinates are not aligned with corpus '{model_input.name}'")
    clusters = hdbscan_fit(reduced.coords, hdbscan_params)
    if clusters.n_clusters == 0:
        raise DegenerateModelError(
            f"No topics found in '{model_input.name}' with "
            f"min_cluster_size={hdbscan_params.min_cluster_size}"
        )

    vocab = build_vocabulary(model_input, stopwords)
    weights = class_tfidf(model_input, clusters, vocab, stopwords)
    labels = clusters.labels
    rows = embeddings.rows.to(torch.float64)

    pools = [top_candidates(weights[c], vocab.terms, n_candidates) for c in range(clusters.n_clusters)]
    for c, pool in enumerate(pools):
        if len(pool) < top_k:
            raise DegenerateModelError(
                f"Topic {c} has only {len(pool)} keyword candidates, {top_k} needed"
            )
    term_vectors = embed_terms([t for pool in pools for t, _ in pool], term_provider)

    keywords = {}
    for c, pool in enumerate(pools):
        centroid = rows[labels == c].mean(dim=0)
        chosen = mmr_rerank(pool, term_vectors, centroid, diversity, top_k)
        weight_of = dict(pool)
        keywords[c] = tuple((t, weight_of[t]) for t in chosen)

    topic_ids = list(range(clusters.n_clusters))
    if clusters.n_noise:
        topic_ids.append(OUTLIER_TOPIC)
    sizes = Counter(int(x) for x in labels)

    unknown = ()
    if reference_corpus is not None:
        reference = build_vocabulary(reference_corpus, stopwords)
        unknown = tuple(sorted({t for kw in keywords.values() for t, _ in kw if t not in reference}))
        if unknown:
            log.warning("%d keywords do not occur in '%s'", len(unknown), reference_corpus.name)

    log.info(
        "Topic model on '%s': %d topics, %d outliers, fingerprint %s",
        model_input.name,
        clusters.n_clusters,
        clusters.n_noise,
        fingerprint[:12],
    )
    return TopicModel(
        topic_ids=tuple(topic_ids),
        doc_assignment={doc_id: int(x) for doc_id, x in zip(model_input.ids, labels)},
        keywords=keywords,
        topic_sizes={t: sizes[t] for t in topic_ids},
        params=params,
        params_fingerprint=fingerprint,
        ctfidf=weights,
        terms=vocab.terms,
        unknown_terms=unknown,
    )


def save_topic_model(model: TopicModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.to_json(), encoding="utf-8")
    return path


def load_topic_model(path: str | Path) -> TopicModel:
    """Reads a model written by :func:`save_topic_model`. The c-TF-IDF matrix is
    not stored, so ``ctfidf`` is ``None``.
    """
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    topics = payload["topics"]
    return TopicModel(
        topic_ids=tuple(t["id"] for t in topics),
        doc_assignment=dict(payload["doc_assignment"]),
        keywords={
            t["id"]: tuple((term, w) for term, w in t["keywords"])
            for t in topics
            if t["id"] != OUTLIER_TOPIC
        },
        topic_sizes={t["id"]: t["size"] for t in topics},
        params=payload["params"],
        params_fingerprint=payload["params_fingerprint"],
        unknown_terms=tuple(payload.get("unknown_terms", ())),
    )
