"""Generate corpora with planted topics.

Each document draws most of its words from one keyword pool and the rest from a
filler vocabulary shared by every pool, so a working topic model should recover one
topic per pool with keywords taken from that pool.
"""
from __future__ import annotations
import logging
from typing import Optional, Sequence

import torch

from sumtopic.corpus import Corpus, Document

__all__ = [
    "DEFAULT_POOLS",
    "DEFAULT_FILLER",
    "SyntheticCorpusGenerator",
    "make_planted_corpus",
]

DEFAULT_POOLS: tuple[tuple[str, ...], ...] = (
    (
        "football", "goal", "striker", "league", "match", "referee", "stadium",
        "coach", "penalty", "tournament", "midfielder", "championship", "defender",
        "keeper", "tackle", "fixture", "season", "trophy", "winger", "playoff",
    ),
    (
        "market", "shares", "investor", "dividend", "inflation", "bond", "equity",
        "earnings", "profit", "revenue", "stock", "banking", "portfolio", "currency",
        "trading", "recession", "merger", "hedge", "yield", "capital",
    ),
    (
        "rocket", "orbit", "astronaut", "satellite", "launch", "galaxy", "telescope",
        "planet", "lunar", "asteroid", "comet", "spacecraft", "mission", "cosmos",
        "nebula", "gravity", "module", "capsule", "mars", "probe",
    ),
)

DEFAULT_FILLER: tuple[str, ...] = (
    "people", "report", "week", "today", "local", "official", "statement", "region",
    "group", "plan", "public", "issue", "percent", "data", "country", "result",
    "city", "level", "process", "policy", "change", "number", "interview", "focus",
    "recent", "major", "expected", "meeting", "announced", "according", "source",
    "previous", "future", "update", "review", "growth",
)

SENTENCE_WORDS = 12


class SyntheticCorpusGenerator:
    """Procedurally generates batches of planted-topic documents.

    Like ``range``, the object is called with a number of batches and then iterated.
    Each batch is a pair of the document texts and a ``(batch_size,)`` tensor with the
    pool each document was drawn from. Pools are assigned round-robin over the
    documents generated so far, so the pools stay balanced.

    Example:
        >>> gen = SyntheticCorpusGenerator(batch_size=4, generator=torch.Generator().manual_seed(0))
        >>> for texts, pools in gen(2):
        ...     print(len(texts), pools.tolist())
        4 [0, 1, 2, 0]
        4 [1, 2, 0, 1]

    Args:
        pools (Sequence[Sequence[str]]): Keyword pools, one per planted topic.
        filler (Sequence[str]): Words shared by all documents.
        doc_length (int): Words per document. Defaults to 60.
        noise_fraction (float): Share of filler words in each document. Defaults to
          0.2.
        batch_size (int): Documents per batch. Defaults to 100.
        generator (torch.Generator, optional): Random number generator, most useful
          with a fixed seed. A value of ``None`` creates a fresh generator.
    """

    def __init__(
        self,
        *,
        pools: Sequence[Sequence[str]] = DEFAULT_POOLS,
        filler: Sequence[str] = DEFAULT_FILLER,
        doc_length: int = 60,
        noise_fraction: float = 0.2,
        batch_size: int = 100,
        generator: Optional[torch.Generator] = None,
    ) -> None:
        self._log = logging.getLogger("sumtopic.main")
        self._log.debug("Initializing SyntheticCorpusGenerator")

        if not pools or any(len(p) == 0 for p in pools):
            raise ValueError("Every keyword pool needs at least one word")
        if not 0.0 <= noise_fraction < 1.0:
            raise ValueError(f"noise_fraction must be in [0, 1), got {noise_fraction}")
        if noise_fraction > 0 and not filler:
            raise ValueError("A positive noise_fraction needs filler words")
        if doc_length < 1 or batch_size < 1:
            raise ValueError("doc_length and batch_size must be positive")

        self.pools = tuple(tuple(p) for p in pools)
        self.filler = tuple(filler)
        self.doc_length = doc_length
        self.batch_size = batch_size
        self.n_filler = round(doc_length * noise_fraction)
        self.generator = torch.Generator() if generator is None else generator

        self._num_batches = 0
        self._index = 0
        self._n_generated = 0

    def __call__(self, num_batches: int):
        self._num_batches = num_batches
        return self

    def __iter__(self):
        self._index = 0
        self._log.debug("Starting %d batches", self._num_batches)
        return self

    def __next__(self) -> tuple[list[str], torch.Tensor]:
        if self._index >= self._num_batches:
            raise StopIteration
        self._index += 1

        start = self._n_generated
        labels = torch.arange(start, start + self.batch_size) % len(self.pools)
        self._n_generated += self.batch_size
        texts = [self._document(self.pools[k]) for k in labels.tolist()]
        return texts, labels

    def _document(self, pool: tuple[str, ...]) -> str:
        n_pool = self.doc_length - self.n_filler
        words = [pool[i] for i in torch.randint(len(pool), (n_pool,), generator=self.generator).tolist()]
        if self.n_filler:
            picks = torch.randint(len(self.filler), (self.n_filler,), generator=self.generator).tolist()
            words += [self.filler[i] for i in picks]
        order = torch.randperm(len(words), generator=self.generator).tolist()
        words = [words[i] for i in order]
        sentences = [
            " ".join(words[i : i + SENTENCE_WORDS]) + "."
            for i in range(0, len(words), SENTENCE_WORDS)
        ]
        return " ".join(s[0].upper() + s[1:] for s in sentences)


def make_planted_corpus(
    n_docs: int,
    *,
    seed: int = 0,
    name: str = "planted",
    **generator_kwargs,
) -> Corpus:
    """Builds a corpus of ``n_docs`` planted-topic documents labeled ``pool-<k>``.

    Extra keyword arguments go to :class:`SyntheticCorpusGenerator`.
    """
    log = logging.getLogger("sumtopic.main")

    if n_docs < 1:
        raise ValueError(f"n_docs must be positive, got {n_docs}")
    generator_kwargs.setdefault("batch_size", min(n_docs, 100))
    gen = SyntheticCorpusGenerator(
        generator=torch.Generator().manual_seed(seed), **generator_kwargs
    )
    num_batches = -(-n_docs // gen.batch_size)

    documents = []
    for texts, labels in gen(num_batches):
        for text, label in zip(texts, labels.tolist()):
            if len(documents) == n_docs:
                break
            documents.append(Document.create(f"doc-{len(documents):05d}", text, f"pool-{label}"))

    log.info("Generated %d documents over %d pools", len(documents), len(gen.pools))
    return Corpus(name=name, documents=tuple(documents), source_format="jsonl")
