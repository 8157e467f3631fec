"""Loading, tokenizing, truncating and persisting document collections.

A :class:`Corpus` is an immutable, ordered collection of :class:`Document` objects
read from one of three source formats (see :data:`SourceFormat`). The
:func:`tokenize` rule defined here is the single tokenization used everywhere else in
the package: by the class-based TF-IDF, the vocabulary and the coherence windows.
"""
from __future__ import annotations
import csv
import json
import logging
import random
import re
import statistics
import sys
from collections import Counter
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, NamedTuple, Optional

__all__ = [
    "SourceFormat",
    "CorpusFormatError",
    "EmptyVocabularyError",
    "Document",
    "Corpus",
    "Vocabulary",
    "CorpusStats",
    "count_words",
    "default_stopwords",
    "load_corpus",
    "save_corpus",
    "truncate_words",
    "tokenize",
    "build_vocabulary",
    "save_vocabulary",
    "load_vocabulary",
    "corpus_stats",
    "sample_corpus",
]

SourceFormat = Literal["jsonl", "csv", "dir"]
"""The supported corpus layouts: one JSON object per line (``'jsonl'``), a CSV file
with a header row (``'csv'``), or a directory of text files (``'dir'``, also accepted
as ``'dir_of_text_files'``).
"""

_TOKEN_PATTERN = re.compile(r"[^\W_]+")


class CorpusFormatError(ValueError):
    """A source record could not be turned into a :class:`Document`.

    Args:
        message (str): Description of the problem.
        record (int, optional): 1-based line or record number in the source.
    """

    def __init__(self, message: str, record: Optional[int] = None) -> None:
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class EmptyVocabularyError(ValueError):
    """Every document of a corpus tokenized to nothing."""


def count_words(text: str) -> int:
    """Number of whitespace-separated tokens in ``text``."""
    return len(text.split())


class Document(NamedTuple):
    """A single modeling unit.

    Use :meth:`Document.create` rather than the tuple constructor so that
    ``word_count`` always matches ``text``.

    Args:
        id (str): Identifier, unique within its corpus.
        text (str): The document text, preserved verbatim from the source.
        label (str, optional): Gold category. Carried for statistics only.
        word_count (int): Whitespace-token count of ``text``.
    """

    id: str
    text: str
    label: Optional[str]
    word_count: int

    @classmethod
    def create(cls, id: str, text: str, label: Optional[str] = None) -> Document:
        return cls(id=id, text=text, label=label, word_count=count_words(text))


class Corpus(NamedTuple):
    """An ordered, non-empty collection of documents.

    Args:
        name (str): Dataset name, used as the id prefix for sources without ids.
        documents (tuple[Document, ...]): The documents in source order.
        source_format (SourceFormat): Layout the corpus was read from.
    """

    name: str
    documents: tuple[Document, ...]
    source_format: SourceFormat = "jsonl"

    @property
    def ids(self) -> list[str]:
        return [doc.id for doc in self.documents]

    @property
    def texts(self) -> list[str]:
        return [doc.text for doc in self.documents]

    @property
    def n_documents(self) -> int:
        return len(self.documents)

    def with_texts(self, texts: Iterable[str], name: Optional[str] = None) -> Corpus:
        """Returns a new corpus with the same ids and labels but new texts, as used
        for the summary-derived corpora.
        """
        texts = list(texts)
        if len(texts) != len(self.documents):
            raise ValueError(
                f"Expected {len(self.documents)} texts, received {len(texts)}."
            )
        docs = tuple(
            Document.create(doc.id, text, doc.label)
            for doc, text in zip(self.documents, texts)
        )
        return Corpus(name or self.name, docs, self.source_format)


class Vocabulary(NamedTuple):
    """The term universe of a corpus after tokenization.

    Args:
        terms (tuple[str, ...]): Unique terms, sorted lexicographically.
        term_index (dict[str, int]): Position of each term in ``terms``.
        doc_freq (dict[str, int]): Number of documents containing each term.
        total_freq (dict[str, int]): Number of occurrences of each term.
    """

    terms: tuple[str, ...]
    term_index: dict[str, int]
    doc_freq: dict[str, int]
    total_freq: dict[str, int]

    def __contains__(self, term: object) -> bool:
        return term in self.term_index


class CorpusStats(NamedTuple):
    """Descriptive statistics of a corpus."""

    name: str
    n_documents: int
    n_labels: int
    label_counts: dict[str, int]
    mean_words: float
    median_words: float
    max_words: int
    truncation_limit: int
    n_truncated: int
    fraction_truncated: float


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    """The English stopword list shipped in ``sumtopic/data/stopwords.txt``."""
    text = resources.files("sumtopic").joinpath("data/stopwords.txt").read_text(
        encoding="utf-8"
    )
    words = (line.strip() for line in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


def tokenize(text: str, stopwords: Optional[frozenset[str]] = None) -> list[str]:
    """Splits ``text`` into lowercase terms.

    The text is lowercased and split on every non-alphanumeric character. Tokens
    shorter than two characters, purely numeric tokens, and stopwords are dropped.
    Token order is preserved.

    Example:
        >>> tokenize("U.S. GDP grew 3%")
        ['gdp', 'grew']

    Args:
        text (str): Text to tokenize.
        stopwords (frozenset[str], optional): Words to drop. Defaults to
          :func:`default_stopwords`.

    Returns:
        list[str]: The terms in order of appearance.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    return [
        tok
        for tok in _TOKEN_PATTERN.findall(text.lower())
        if len(tok) >= 2 and not tok.isnumeric() and tok not in stopwords
    ]


def _check_unique(documents: list[Document]) -> None:
    seen: set[str] = set()
    for i, doc in enumerate(documents, start=1):
        if doc.id in seen:
            raise CorpusFormatError(f"duplicate document id '{doc.id}'", i)
        seen.add(doc.id)


def _record_to_document(
    record: dict,
    index: int,
    record_no: int,
    name: str,
    text_field: str,
    label_field: Optional[str],
) -> Document:
    if not isinstance(record, dict):
        raise CorpusFormatError("expected an object", record_no)
    text = record.get(text_field)
    if not isinstance(text, str):
        raise CorpusFormatError(f"missing text field '{text_field}'", record_no)
    label = None
    if label_field is not None and record.get(label_field) not in (None, ""):
        label = str(record[label_field])
    doc_id = record.get("id")
    if doc_id in (None, ""):
        doc_id = f"{name}-{index}"
    return Document.create(str(doc_id), text, label)


def _load_jsonl(
    path: Path, name: str, text_field: str, label_field: Optional[str]
) -> list[Document]:
    documents = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"invalid JSON ({e.msg})", line_no) from e
            documents.append(
                _record_to_document(
                    record, len(documents), line_no, name, text_field, label_field
                )
            )
    return documents


def _load_csv(
    path: Path, name: str, text_field: str, label_field: Optional[str]
) -> list[Document]:
    csv.field_size_limit(min(sys.maxsize, 2**31 - 1))
    documents = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise CorpusFormatError("missing header row", 1)
        if text_field not in reader.fieldnames:
            raise CorpusFormatError(
                f"header has no column '{text_field}' (found {reader.fieldnames})", 1
            )
        for index, row in enumerate(reader):
            if None in row:
                raise CorpusFormatError("row has more fields than the header", index + 2)
            documents.append(
                _record_to_document(row, index, index + 2, name, text_field, label_field)
            )
    return documents


def _load_dir(path: Path) -> list[Document]:
    files = sorted(p for p in path.rglob("*") if p.is_file() and not p.name.startswith("."))
    documents = []
    for file in files:
        text = file.read_text(encoding="utf-8", errors="replace")
        label = file.parent.name if file.parent != path else None
        # stems repeat across label directories, so the id keeps the relative path
        doc_id = "/".join(file.relative_to(path).with_suffix("").parts)
        documents.append(Document.create(doc_id, text, label))
    return documents


def load_corpus(
    path: str | Path,
    format: SourceFormat,
    text_field: str = "text",
    label_field: Optional[str] = "label",
    name: Optional[str] = None,
) -> Corpus:
    """Reads a corpus from disk.

    Records without an ``id`` are assigned ``<name>-<index>`` with a 0-based index.
    For the ``'dir'`` format every file is one document and the name of its parent
    directory is the label (20 Newsgroups layout). The id is the file stem, prefixed
    with the directories between ``path`` and the file (``'sci.space/60154'``).

    Args:
        path (str | Path): The JSONL file, CSV file or directory.
        format (SourceFormat): One of ``'jsonl'``, ``'csv'`` or ``'dir'``.
        text_field (str): Record key holding the document text.
        label_field (str, optional): Record key holding the label.
        name (str, optional): Corpus name. Defaults to the stem of ``path``.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ValueError: If ``format`` is not supported.
        CorpusFormatError: On a malformed record (the record number is reported),
          a duplicate id, or an empty corpus.

    Returns:
        Corpus: The documents in a stable order.
    """
    log = logging.getLogger("sumtopic.main")

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Corpus source not found: {path}")
    name = name or path.stem
    if format == "dir_of_text_files":
        format = "dir"

    log.info("Loading %s corpus '%s' from %s", format, name, str(path))
    if format == "jsonl":
        documents = _load_jsonl(path, name, text_field, label_field)
    elif format == "csv":
        documents = _load_csv(path, name, text_field, label_field)
    elif format == "dir":
        if not path.is_dir():
            raise CorpusFormatError(f"{path} is not a directory")
        documents = _load_dir(path)
    else:
        raise ValueError(
            f"Invalid corpus format: {format}\nPlease use 'jsonl', 'csv', or 'dir'."
        )

    if not documents:
        raise CorpusFormatError(f"corpus at {path} is empty")
    _check_unique(documents)
    log.info("Loaded %d documents", len(documents))
    return Corpus(name, tuple(documents), format)


def save_corpus(corpus: Corpus, path: str | Path) -> Path:
    """Writes ``corpus`` as JSONL with ``id``, ``text`` and ``label`` keys, readable
    again with ``load_corpus(path, "jsonl")``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc in corpus.documents:
            record = {"id": doc.id, "text": doc.text, "label": doc.label}
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def truncate_words(doc: Document, max_words: int) -> Document:
    """Keeps the first ``max_words`` whitespace tokens of a document.

    Documents already within the limit are returned unchanged, so truncation is
    idempotent. Truncated text is rejoined with single spaces.

    Raises:
        ValueError: If ``max_words`` is less than 1.
    """
    if max_words < 1:
        raise ValueError(f"max_words must be positive, got {max_words}")
    if doc.word_count <= max_words:
        return doc
    text = " ".join(doc.text.split()[:max_words])
    return Document.create(doc.id, text, doc.label)


def build_vocabulary(
    corpus: Corpus, stopwords: Optional[frozenset[str]] = None
) -> Vocabulary:
    """Counts the terms of every document in ``corpus``.

    Raises:
        ValueError: If the corpus has no documents.
        EmptyVocabularyError: If no document yields a single term.
    """
    if not corpus.documents:
        raise ValueError("Cannot build a vocabulary from an empty corpus.")

    doc_freq: Counter[str] = Counter()
    total_freq: Counter[str] = Counter()
    for doc in corpus.documents:
        tokens = tokenize(doc.text, stopwords)
        total_freq.update(tokens)
        doc_freq.update(set(tokens))

    if not total_freq:
        raise EmptyVocabularyError(
            f"Corpus '{corpus.name}' has an empty vocabulary after tokenization."
        )

    terms = tuple(sorted(total_freq))
    return Vocabulary(
        terms=terms,
        term_index={t: i for i, t in enumerate(terms)},
        doc_freq={t: doc_freq[t] for t in terms},
        total_freq={t: total_freq[t] for t in terms},
    )


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> Path:
    """Writes the vocabulary as JSON; the output is byte-identical for equal
    vocabularies.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "terms": [[t, vocab.doc_freq[t], vocab.total_freq[t]] for t in vocab.terms]
    }
    path.write_text(json.dumps(payload, separators=(",", ":")) + "\n", encoding="utf-8")
    return path


def load_vocabulary(path: str | Path) -> Vocabulary:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = payload["terms"]
    terms = tuple(row[0] for row in rows)
    return Vocabulary(
        terms=terms,
        term_index={t: i for i, t in enumerate(terms)},
        doc_freq={row[0]: int(row[1]) for row in rows},
        total_freq={row[0]: int(row[2]) for row in rows},
    )


def corpus_stats(corpus: Corpus, truncation_limit: int) -> CorpusStats:
    """Summarizes document lengths and labels, including how many documents a
    given truncation limit would cut.
    """
    counts = [doc.word_count for doc in corpus.documents]
    labels = Counter(doc.label for doc in corpus.documents if doc.label is not None)
    n_truncated = sum(c > truncation_limit for c in counts)
    return CorpusStats(
        name=corpus.name,
        n_documents=len(counts),
        n_labels=len(labels),
        label_counts=dict(sorted(labels.items())),
        mean_words=statistics.fmean(counts),
        median_words=float(statistics.median(counts)),
        max_words=max(counts),
        truncation_limit=truncation_limit,
        n_truncated=n_truncated,
        fraction_truncated=n_truncated / len(counts),
    )


def sample_corpus(corpus: Corpus, n: int, seed: int = 0) -> Corpus:
    """Draws a deterministic pilot sample of ``n`` documents, keeping corpus order.

    Useful for trying several summary lengths on part of a dataset before running
    the full grid. If ``n`` is at least the corpus size the corpus is returned.
    """
    if n < 1:
        raise ValueError(f"Sample size must be positive, got {n}")
    if n >= corpus.n_documents:
        return corpus
    chosen = sorted(random.Random(seed).sample(range(corpus.n_documents), n))
    docs = tuple(corpus.documents[i] for i in chosen)
    return Corpus(f"{corpus.name}-sample{n}", docs, corpus.source_format)
