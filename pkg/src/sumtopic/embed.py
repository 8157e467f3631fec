"""Document embeddings through a pluggable :class:`EmbeddingProvider`.

Rows of an :class:`EmbeddingMatrix` are L2-normalized; documents with no usable
text are embedded as the zero vector and flagged. Matrices persist in a small binary
format (see :mod:`sumtopic.matrixio`) shared with the reduced UMAP coordinates.
"""
from __future__ import annotations
import hashlib
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence

import torch

from sumtopic.configuration import EmbedderConfig
from sumtopic.corpus import Corpus, tokenize
from sumtopic.matrixio import load_matrix, save_matrix
from sumtopic.provider import ProviderError, auth_headers, post_json, safe_id

__all__ = [
    "EmbeddingMatrix",
    "EmbeddingProvider",
    "HashingEmbeddingProvider",
    "HttpEmbeddingProvider",
    "make_embedding_provider",
    "fallback_embed",
    "cosine",
    "normalize_rows",
    "corpus_hash",
    "embed_corpus",
    "embed_terms",
    "save_embeddings",
    "load_embeddings",
]

N_BUCKETS = 2**16


class EmbeddingMatrix(NamedTuple):
    """Row-per-document vectors.

    Args:
        doc_ids (tuple[str, ...]): Document ids, in row order.
        dim (int): Number of columns.
        rows (torch.Tensor): ``float32`` tensor of shape ``(n, dim)``.
        provider_id (str): The provider that produced the rows.
        zero_rows (tuple[int, ...]): Indices of all-zero rows (empty texts).
        corpus_hash (str): Content hash of the embedded corpus.
    """

    doc_ids: tuple[str, ...]
    dim: int
    rows: torch.Tensor
    provider_id: str
    zero_rows: tuple[int, ...] = ()
    corpus_hash: str = ""


class EmbeddingProvider(ABC):
    """A service turning texts into fixed-size vectors."""

    @property
    @abstractmethod
    def provider_id(self) -> str:
        """Stable identifier of the provider and its settings."""

    @property
    @abstractmethod
    def dim(self) -> int:
        """The embedding dimension."""

    @abstractmethod
    def embed_batch(self, texts: Sequence[str]) -> torch.Tensor:
        """Embeds ``texts``, returning a ``(len(texts), dim)`` tensor in input order.

        Raises:
            ProviderError: On failure after retries.
        """


@lru_cache(maxsize=4)
def _projection(dim: int, seed: int) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.randn((N_BUCKETS, dim), generator=generator, dtype=torch.float32)


def _bucket(term: str) -> int:
    digest = hashlib.blake2b(term.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % N_BUCKETS


def fallback_embed(text: str, dim: int = 256, seed: int = 42) -> torch.Tensor:
    """Deterministic bag-of-words embedding.

    Terms from :func:`~sumtopic.corpus.tokenize` are hashed into a
    :math:`2^{16}`-bucket count vector, which is projected with a Gaussian random
    matrix drawn once per ``(dim, seed)`` and L2-normalized. Random projection
    approximately preserves the cosine between count vectors, so texts sharing
    terms land close together.

    Args:
        text (str): Text to embed.
        dim (int): Output dimension, at least 8.
        seed (int): Seed of the projection matrix.

    Returns:
        torch.Tensor: ``float64`` vector of shape ``(dim,)``; the zero vector if
        ``text`` has no terms.
    """
    if dim < 8:
        raise ValueError(f"Embedding dimension must be at least 8, got {dim}")
    terms = tokenize(text)
    if not terms:
        return torch.zeros(dim, dtype=torch.float64)

    counts: dict[int, int] = {}
    for term in terms:
        b = _bucket(term)
        counts[b] = counts.get(b, 0) + 1
    buckets = sorted(counts)
    weights = torch.tensor([counts[b] for b in buckets], dtype=torch.float64)
    basis = _projection(dim, seed)[torch.tensor(buckets)].to(torch.float64)
    vector = weights @ basis
    norm = torch.linalg.vector_norm(vector)
    return vector / norm if norm > 0 else vector


def cosine(u: Sequence[float] | torch.Tensor, v: Sequence[float] | torch.Tensor) -> float:
    """Cosine similarity of two vectors; 0 when either has zero norm.

    Raises:
        ValueError: If the dimensions differ.
    """
    u = torch.as_tensor(u, dtype=torch.float64).flatten()
    v = torch.as_tensor(v, dtype=torch.float64).flatten()
    if u.shape != v.shape:
        raise ValueError(f"Dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = torch.linalg.vector_norm(u)
    nv = torch.linalg.vector_norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(torch.clamp(torch.dot(u, v) / (nu * nv), -1.0, 1.0))


def normalize_rows(rows: torch.Tensor) -> tuple[torch.Tensor, tuple[int, ...]]:
    """L2-normalizes each row, leaving zero rows at zero.

    Returns:
        tuple[torch.Tensor, tuple[int, ...]]: The normalized rows and the indices of
        the zero rows.
    """
    rows = rows.to(torch.float64)
    norms = torch.linalg.vector_norm(rows, dim=1)
    zero = norms == 0
    out = rows / torch.where(zero, torch.ones_like(norms), norms).unsqueeze(1)
    return out, tuple(int(i) for i in torch.nonzero(zero).flatten())


class HashingEmbeddingProvider(EmbeddingProvider):
    """Offline provider backed by :func:`fallback_embed`."""

    def __init__(self, dim: int = 256, seed: int = 42) -> None:
        if dim < 8:
            raise ValueError(f"Embedding dimension must be at least 8, got {dim}")
        self._dim = dim
        self.seed = seed

    @property
    def provider_id(self) -> str:
        return f"hashing-d{self._dim}-s{self.seed}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed_batch(self, texts: Sequence[str]) -> torch.Tensor:
        if not texts:
            return torch.zeros((0, self._dim), dtype=torch.float64)
        return torch.stack([fallback_embed(t, self._dim, self.seed) for t in texts])


class HttpEmbeddingProvider(EmbeddingProvider):
    """Embedding endpoint speaking ``{model, input: [...]}`` and answering
    ``{"data": [{"embedding": [...]}, ...]}``.
    """

    def __init__(self, config: EmbedderConfig) -> None:
        self.config = config
        self.url = config.base_url.rstrip("/") + config.endpoint_path
        self._dim: int | None = None

    @property
    def provider_id(self) -> str:
        return safe_id(f"http-{self.config.model}")

    @property
    def dim(self) -> int:
        if self._dim is None:
            self._dim = int(self.embed_batch(["dimension check"]).shape[1])
        return self._dim

    def embed_batch(self, texts: Sequence[str]) -> torch.Tensor:
        cfg = self.config
        response = post_json(
            self.url,
            {"model": cfg.model, "input": list(texts)},
            headers=auth_headers(cfg.api_key_env, cfg.auth_header, cfg.auth_scheme),
            timeout=cfg.timeout,
            max_attempts=cfg.max_attempts,
            backoff_seconds=cfg.backoff_seconds,
        )
        try:
            data = sorted(response["data"], key=lambda item: item.get("index", 0))
            vectors = torch.tensor([item["embedding"] for item in data], dtype=torch.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ProviderError(f"Malformed embedding response: {e}") from e
        if vectors.ndim != 2 or vectors.shape[0] != len(texts):
            raise ProviderError(
                f"Expected {len(texts)} embeddings, received {tuple(vectors.shape)}"
            )
        self._dim = int(vectors.shape[1])
        return vectors


def make_embedding_provider(
    config: EmbedderConfig, offline: bool = False
) -> EmbeddingProvider:
    """Creates the provider named in ``config``; ``offline`` forces the hashing
    provider.
    """
    if offline or config.provider == "hashing":
        return HashingEmbeddingProvider(config.dim, config.seed)
    if config.provider == "http":
        return HttpEmbeddingProvider(config)
    raise ValueError(
        f"Unknown embedding provider '{config.provider}'; use 'hashing' or 'http'."
    )


def corpus_hash(corpus: Corpus) -> str:
    """SHA-256 over the ids and texts of ``corpus``, in order."""
    h = hashlib.sha256()
    for doc in corpus.documents:
        h.update(doc.id.encode("utf-8"))
        h.update(b"\x00")
        h.update(doc.text.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()


def embed_corpus(
    corpus: Corpus,
    provider: EmbeddingProvider,
    batch_size: int = 64,
    concurrency_limit: int = 2,
    out_path: str | Path | None = None,
) -> EmbeddingMatrix:
    """Embeds every document of ``corpus``, one row per document in corpus order.

    Args:
        corpus (Corpus): Documents to embed.
        provider (EmbeddingProvider): The embedding service.
        batch_size (int): Texts per provider call.
        concurrency_limit (int): Batches embedded in parallel. Defaults to 2.
        out_path (str | Path, optional): When given, the matrix is saved there with
          :func:`save_embeddings`.

    Raises:
        ValueError: If the corpus is empty or batches disagree on the dimension.
        ProviderError: If the provider fails after its retries.
    """
    log = logging.getLogger("sumtopic.main")

    if not corpus.documents:
        raise ValueError("Cannot embed an empty corpus.")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")

    texts = corpus.texts
    batches = [texts[i : i + batch_size] for i in range(0, len(texts), batch_size)]
    log.info(
        "Embedding %d documents in %d batches with %s",
        len(texts),
        len(batches),
        provider.provider_id,
    )

    with ThreadPoolExecutor(max_workers=max(1, concurrency_limit)) as pool:
        results = list(pool.map(provider.embed_batch, batches))

    dims = {int(r.shape[1]) for r in results}
    if len(dims) != 1:
        raise ValueError(f"Embedding dimension mismatch across batches: {sorted(dims)}")

    rows, zero_rows = normalize_rows(torch.cat(results, dim=0))
    if zero_rows:
        log.warning("%d documents embedded as zero vectors", len(zero_rows))

    matrix = EmbeddingMatrix(
        doc_ids=tuple(corpus.ids),
        dim=dims.pop(),
        rows=rows.to(torch.float32),
        provider_id=provider.provider_id,
        zero_rows=zero_rows,
        corpus_hash=corpus_hash(corpus),
    )
    if out_path is not None:
        save_embeddings(matrix, out_path)
    return matrix


def embed_terms(terms: Sequence[str], provider: EmbeddingProvider) -> dict[str, torch.Tensor]:
    """Normalized ``float64`` vectors for single terms, as used by MMR."""
    unique = sorted(set(terms))
    if not unique:
        return {}
    rows, _ = normalize_rows(provider.embed_batch(unique))
    return {term: rows[i] for i, term in enumerate(unique)}


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> Path:
    """Persists ``matrix`` with :func:`~sumtopic.matrixio.save_matrix`."""
    return save_matrix(
        path, matrix.doc_ids, matrix.rows, matrix.provider_id, matrix.corpus_hash, "embed"
    )


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Reads a matrix saved by :func:`save_embeddings`.

    Raises:
        ValueError: If the file holds reduced coordinates instead of embeddings.
    """
    stored = load_matrix(path)
    if stored.stage != "embed":
        raise ValueError(f"{path} holds '{stored.stage}' coordinates, not embeddings")
    rows = stored.rows
    zero_rows = tuple(int(i) for i in torch.nonzero(torch.all(rows == 0, dim=1)).flatten())
    return EmbeddingMatrix(
        doc_ids=stored.doc_ids,
        dim=int(rows.shape[1]),
        rows=rows,
        provider_id=stored.provider_id,
        zero_rows=zero_rows,
        corpus_hash=stored.corpus_hash,
    )
