"""Length-controlled document summaries from a few-shot persona prompt.

Each document is truncated to a fixed word count, wrapped in a prompt made of a
persona instruction, a length instruction, two worked exemplars and the target
document, and sent to a :class:`CompletionProvider`. Results are cached on disk,
content-addressed by provider and prompt, so a summary is generated only once.

Example:
    >>> template = load_template()
    >>> provider = ExtractiveProvider()
    >>> run = summarize_corpus(corpus, provider, template, SHORT, cache=SummaryCache("cache"))
    >>> run.corpus.texts[0]
"""
from __future__ import annotations
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Literal, NamedTuple, Optional

from sumtopic.configuration import SummarizerConfig, getDictFromFile
from sumtopic.corpus import Corpus, Document, count_words, truncate_words
from sumtopic.provider import (
    ProviderError,
    auth_headers,
    post_json,
    resolve_field,
    safe_id,
)

__all__ = [
    "SummaryKind",
    "SummaryVariant",
    "SHORT",
    "LONG",
    "get_variant",
    "PromptTemplate",
    "SummaryRecord",
    "SummaryRun",
    "SummarizationAborted",
    "CompletionProvider",
    "HttpCompletionProvider",
    "ExtractiveProvider",
    "SummaryCache",
    "load_template",
    "build_prompt",
    "prompt_hash",
    "clean_completion",
    "extractive_fallback",
    "summarize_document",
    "summarize_corpus",
    "make_completion_provider",
]

SummaryKind = Literal["short", "long"]


class SummaryVariant(NamedTuple):
    """A target summary length range, in whitespace words."""

    kind: SummaryKind
    min_words: int
    max_words: int


SHORT = SummaryVariant("short", 20, 30)
LONG = SummaryVariant("long", 60, 80)


def get_variant(kind: str) -> SummaryVariant:
    """Returns :data:`SHORT` or :data:`LONG` by name."""
    if kind == "short":
        return SHORT
    if kind == "long":
        return LONG
    raise ValueError(f"Unknown summary variant '{kind}'; use 'short' or 'long'.")


class PromptTemplate(NamedTuple):
    """The fixed parts of the summarization prompt.

    Args:
        persona_instruction (str): Casts the model as a summarization expert.
        exemplars (tuple[tuple[str, str], ...]): Exactly two
          ``(document, summary)`` pairs.
        length_instruction (str): Contains ``{min_words}`` and ``{max_words}``
          placeholders filled from the :class:`SummaryVariant`.
    """

    persona_instruction: str
    exemplars: tuple[tuple[str, str], ...]
    length_instruction: str

    def validate(self) -> PromptTemplate:
        if len(self.exemplars) != 2:
            raise ValueError(
                f"Prompt template needs exactly two exemplars, got {len(self.exemplars)}"
            )
        if "summarization expert" not in self.persona_instruction.lower():
            raise ValueError("persona_instruction must name the summarization-expert role")
        if "{min_words}" not in self.length_instruction or (
            "{max_words}" not in self.length_instruction
        ):
            raise ValueError(
                "length_instruction needs {min_words} and {max_words} placeholders"
            )
        return self


class SummaryRecord(NamedTuple):
    """One generated summary and its provenance."""

    doc_id: str
    variant: SummaryKind
    text: str
    word_count: int
    provider_id: str
    prompt_hash: str
    in_length_range: bool

    @classmethod
    def create(
        cls,
        doc_id: str,
        variant: SummaryVariant,
        text: str,
        provider_id: str,
        prompt_hash: str,
    ) -> SummaryRecord:
        n = count_words(text)
        return cls(
            doc_id=doc_id,
            variant=variant.kind,
            text=text,
            word_count=n,
            provider_id=provider_id,
            prompt_hash=prompt_hash,
            in_length_range=variant.min_words <= n <= variant.max_words,
        )


class SummaryRun(NamedTuple):
    """Result of :func:`summarize_corpus`.

    Args:
        records (list[SummaryRecord]): One record per document, in corpus order.
        corpus (Corpus): Derived corpus whose texts are the summaries.
        n_provider_calls (int): Completion requests actually sent.
        failures (dict[str, str]): Document id to error message for documents
          whose summary fell back to the extractive rule.
    """

    records: list[SummaryRecord]
    corpus: Corpus
    n_provider_calls: int
    failures: dict[str, str]


class SummarizationAborted(RuntimeError):
    """More than 5% of the documents of a corpus could not be summarized."""

    def __init__(self, failures: dict[str, str], n_documents: int) -> None:
        super().__init__(
            f"Summarization failed for {len(failures)} of {n_documents} documents"
        )
        self.failures = failures


class CompletionProvider(ABC):
    """A text completion service.

    Providers receive the assembled prompt together with the truncated document and
    the summary variant; remote providers only use the prompt.
    """

    @property
    @abstractmethod
    def provider_id(self) -> str:
        """Stable identifier, used as the cache namespace."""

    @abstractmethod
    def complete(self, prompt: str, *, document: str, variant: SummaryVariant) -> str:
        """Returns the raw completion for ``prompt``.

        Raises:
            ProviderError: On transport failure after retries.
        """


class HttpCompletionProvider(CompletionProvider):
    """Completion endpoint speaking ``{model, prompt, temperature, max_tokens}``.

    Args:
        config (SummarizerConfig): Endpoint, model, decoding and retry settings.
    """

    def __init__(self, config: SummarizerConfig) -> None:
        self.config = config
        self.url = config.base_url.rstrip("/") + config.endpoint_path
        self._provider_id = safe_id(f"{config.model}-t{config.temperature:g}")

    @property
    def provider_id(self) -> str:
        return self._provider_id

    def complete(self, prompt: str, *, document: str, variant: SummaryVariant) -> str:
        cfg = self.config
        payload = {
            "model": cfg.model,
            "prompt": prompt,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        response = post_json(
            self.url,
            payload,
            headers=auth_headers(cfg.api_key_env, cfg.auth_header, cfg.auth_scheme),
            timeout=cfg.timeout,
            max_attempts=cfg.max_attempts,
            backoff_seconds=cfg.backoff_seconds,
        )
        text = resolve_field(response, cfg.response_field)
        if not isinstance(text, str):
            raise ProviderError(f"Field '{cfg.response_field}' is not a string")
        return text


class ExtractiveProvider(CompletionProvider):
    """Offline, deterministic provider returning :func:`extractive_fallback` of the
    document. Needs no network.
    """

    @property
    def provider_id(self) -> str:
        return "extractive"

    def complete(self, prompt: str, *, document: str, variant: SummaryVariant) -> str:
        return extractive_fallback(document, variant)


def make_completion_provider(
    config: SummarizerConfig, offline: bool = False
) -> CompletionProvider:
    """Creates the provider named in ``config``; ``offline`` forces the extractive
    provider.
    """
    if offline or config.provider == "extractive":
        return ExtractiveProvider()
    if config.provider == "http":
        return HttpCompletionProvider(config)
    raise ValueError(
        f"Unknown summarizer provider '{config.provider}'; use 'http' or 'extractive'."
    )


def load_template(path: Optional[str | Path] = None) -> PromptTemplate:
    """Reads a prompt template from a YAML or JSON file with the keys
    ``persona_instruction``, ``length_instruction`` and ``exemplars`` (a list of
    ``{document, summary}`` mappings). Without ``path`` the packaged default is used.
    """
    if path is None:
        with resources.as_file(
            resources.files("sumtopic").joinpath("data/prompt_template.yaml")
        ) as default:
            settings = getDictFromFile(default)
    else:
        settings = getDictFromFile(path)

    exemplars = tuple(
        (str(ex["document"]).strip(), str(ex["summary"]).strip())
        for ex in settings.get("exemplars", [])
    )
    return PromptTemplate(
        persona_instruction=str(settings.get("persona_instruction", "")).strip(),
        exemplars=exemplars,
        length_instruction=str(settings.get("length_instruction", "")).strip(),
    ).validate()


def build_prompt(doc: Document, template: PromptTemplate, variant: SummaryVariant) -> str:
    """Assembles the few-shot prompt for one document.

    The prompt is the persona instruction, the length instruction with the variant's
    word range substituted, both exemplars as ``Document:``/``Summary:`` blocks, and
    the target document followed by an open ``Summary:`` cue.

    Raises:
        ValueError: If the document text is empty.
    """
    if not doc.text.strip():
        raise ValueError(f"Document '{doc.id}' has no text to summarize")

    parts = [
        template.persona_instruction,
        template.length_instruction.format(
            min_words=variant.min_words, max_words=variant.max_words
        ),
    ]
    for ex_doc, ex_summary in template.exemplars:
        parts.append(f"Document:\n{ex_doc}\nSummary:\n{ex_summary}")
    parts.append(f"Document:\n{doc.text}\nSummary:")
    return "\n\n".join(parts)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


_LEADING_LABEL = re.compile(r"^\s*summary\s*:\s*", re.IGNORECASE)


def clean_completion(text: str) -> str:
    """Strips a leading ``Summary:`` label and surrounding whitespace."""
    return _LEADING_LABEL.sub("", text, count=1).strip()


_SENTENCE = re.compile(r"[^.!?]+[.!?]*")


def extractive_fallback(doc_text: str, variant: SummaryVariant) -> str:
    """Leading-sentence summary that never exceeds ``variant.max_words``.

    Sentences (split on ``.``, ``!`` and ``?``) are taken from the start while the
    next one still fits. If the first sentence alone is too long, its first
    ``max_words`` words are returned.

    Example:
        >>> extractive_fallback("One two three. Four five six seven.", SummaryVariant("short", 1, 5))
        'One two three.'
    """
    sentences = [" ".join(s.split()) for s in _SENTENCE.findall(doc_text)]
    sentences = [s for s in sentences if s]
    if not sentences:
        return ""

    first = sentences[0].split()
    if len(first) > variant.max_words:
        return " ".join(first[: variant.max_words])

    chosen: list[str] = []
    n_words = 0
    for sentence in sentences:
        n = len(sentence.split())
        if n_words + n > variant.max_words:
            break
        chosen.append(sentence)
        n_words += n
    return " ".join(chosen)


class SummaryCache:
    """Content-addressed summary store laid out as
    ``<cache_dir>/<provider_id>/<prompt_hash>.json``.

    Writes go to a temporary file that is then renamed into place, so a cache
    entry is either complete or absent.
    """

    def __init__(self, cache_dir: str | Path) -> None:
        self.cache_dir = Path(cache_dir)
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, provider_id: str, hash_: str) -> Path:
        return self.cache_dir / provider_id / f"{hash_}.json"

    def lock(self, provider_id: str, hash_: str) -> threading.Lock:
        """Per-entry lock serializing concurrent requests for the same prompt."""
        with self._guard:
            return self._locks.setdefault((provider_id, hash_), threading.Lock())

    def get(self, provider_id: str, hash_: str) -> Optional[SummaryRecord]:
        path = self.path(provider_id, hash_)
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        return SummaryRecord(**data)

    def put(self, record: SummaryRecord) -> Path:
        path = self.path(record.provider_id, record.prompt_hash)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(record._asdict(), f, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return path


def _summarize(
    doc: Document,
    provider: CompletionProvider,
    template: PromptTemplate,
    variant: SummaryVariant,
    truncation_limit: int,
    cache: Optional[SummaryCache],
) -> tuple[SummaryRecord, int]:
    log = logging.getLogger("sumtopic.main")

    truncated = truncate_words(doc, truncation_limit)
    prompt = build_prompt(truncated, template, variant)
    hash_ = prompt_hash(prompt)

    if cache is None:
        return _request(truncated, prompt, hash_, provider, variant)

    with cache.lock(provider.provider_id, hash_):
        cached = cache.get(provider.provider_id, hash_)
        if cached is not None:
            log.debug("Cache hit for %s (%s)", doc.id, hash_[:12])
            return cached._replace(doc_id=doc.id), 0
        record, calls = _request(truncated, prompt, hash_, provider, variant)
        cache.put(record)
        return record, calls


def _request(
    doc: Document,
    prompt: str,
    hash_: str,
    provider: CompletionProvider,
    variant: SummaryVariant,
) -> tuple[SummaryRecord, int]:
    log = logging.getLogger("sumtopic.main")

    calls = 0
    # An empty completion is retried once before it is treated as a failure.
    for _ in range(2):
        calls += 1
        text = clean_completion(
            provider.complete(prompt, document=doc.text, variant=variant)
        )
        if text:
            record = SummaryRecord.create(
                doc.id, variant, text, provider.provider_id, hash_
            )
            return record, calls
        log.warning("Empty completion for document %s", doc.id)
    raise ProviderError(f"Provider returned an empty completion for document '{doc.id}'")


def summarize_document(
    doc: Document,
    provider: CompletionProvider,
    template: PromptTemplate,
    variant: SummaryVariant,
    truncation_limit: int = 2800,
    cache: Optional[SummaryCache] = None,
) -> SummaryRecord:
    """Summarizes one document, consulting and filling ``cache`` when given.

    The document is truncated to ``truncation_limit`` words before the prompt is
    built. The completion is cleaned with :func:`clean_completion`.

    Raises:
        ProviderError: If the provider fails after its retries, or returns an empty
          completion twice.
    """
    record, _ = _summarize(doc, provider, template, variant, truncation_limit, cache)
    return record


def summarize_corpus(
    corpus: Corpus,
    provider: CompletionProvider,
    template: PromptTemplate,
    variant: SummaryVariant,
    truncation_limit: int = 2800,
    concurrency_limit: int = 4,
    cache: Optional[SummaryCache] = None,
    max_failure_rate: float = 0.05,
) -> SummaryRun:
    """Summarizes every document of ``corpus`` with bounded parallelism.

    Progress is durable through ``cache``: a rerun after an interruption only
    requests the missing summaries. Documents whose request fails are given the
    extractive summary in the derived corpus and listed in
    :attr:`SummaryRun.failures`; their records are not cached.

    Args:
        corpus (Corpus): Documents to summarize.
        provider (CompletionProvider): The completion service.
        template (PromptTemplate): Persona, length instruction and exemplars.
        variant (SummaryVariant): :data:`SHORT` or :data:`LONG`.
        truncation_limit (int): Words kept per document before prompting.
        concurrency_limit (int): Parallel provider calls. Defaults to 4.
        cache (SummaryCache, optional): The summary cache.
        max_failure_rate (float): Failure fraction above which the run aborts.

    Raises:
        ValueError: If the corpus is empty.
        SummarizationAborted: If more than ``max_failure_rate`` of the documents
          fail.

    Returns:
        SummaryRun: Records, derived corpus and call statistics.
    """
    log = logging.getLogger("sumtopic.main")

    if not corpus.documents:
        raise ValueError("Cannot summarize an empty corpus.")

    log.info(
        "Summarizing %d documents of '%s' (%s, %d-%d words) with %s",
        corpus.n_documents,
        corpus.name,
        variant.kind,
        variant.min_words,
        variant.max_words,
        provider.provider_id,
    )

    def work(doc: Document):
        try:
            return _summarize(doc, provider, template, variant, truncation_limit, cache)
        except (ProviderError, ValueError) as e:
            return e

    with ThreadPoolExecutor(max_workers=max(1, concurrency_limit)) as pool:
        results = list(pool.map(work, corpus.documents))

    records: list[SummaryRecord] = []
    failures: dict[str, str] = {}
    n_calls = 0
    for doc, result in zip(corpus.documents, results):
        if isinstance(result, Exception):
            failures[doc.id] = str(result)
            text = extractive_fallback(truncate_words(doc, truncation_limit).text, variant)
            records.append(
                SummaryRecord.create(doc.id, variant, text, "extractive-fallback", "")
            )
            continue
        record, calls = result
        n_calls += calls
        records.append(record)

    if failures:
        if len(failures) > max_failure_rate * corpus.n_documents:
            raise SummarizationAborted(failures, corpus.n_documents)
        log.warning(
            "%d documents fell back to extractive summaries", len(failures)
        )

    out_of_range = sum(not r.in_length_range for r in records)
    if out_of_range:
        log.warning(
            "%.1f%% of %s summaries fall outside %d-%d words",
            100.0 * out_of_range / len(records),
            variant.kind,
            variant.min_words,
            variant.max_words,
        )
    log.info("Summarization complete: %d provider calls", n_calls)

    derived = corpus.with_texts(
        (r.text for r in records), name=f"{corpus.name}-{variant.kind}"
    )
    return SummaryRun(records, derived, n_calls, failures)
