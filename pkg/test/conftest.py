import json
import threading
from pathlib import Path

import pytest
import requests

import sumtopic
from sumtopic.provider import ProviderError


class CountingProvider(sumtopic.CompletionProvider):
    """Returns the first words of the document and counts the calls it receives.

    Documents whose id appears in ``fail_on`` raise a ProviderError; ``empty_first``
    makes the first completion of each prompt empty.
    """

    def __init__(self, fail_on=(), empty_first=False, name="counting"):
        self.calls = 0
        self.documents = []
        self.fail_on = set(fail_on)
        self.empty_first = empty_first
        self._seen = set()
        self._name = name
        self._lock = threading.Lock()

    @property
    def provider_id(self):
        return self._name

    def complete(self, prompt, *, document, variant):
        with self._lock:
            self.calls += 1
            self.documents.append(document)
            first_time = prompt not in self._seen
            self._seen.add(prompt)
        for doc_id in self.fail_on:
            if f"[{doc_id}]" in document:
                raise ProviderError(f"boom on {doc_id}")
        if self.empty_first and first_time:
            return "   "
        words = document.split()[: variant.min_words]
        return "Summary: " + " ".join(words)


@pytest.fixture
def counting_provider():
    return CountingProvider()


@pytest.fixture
def make_provider():
    return CountingProvider


@pytest.fixture
def tiny_corpus() -> sumtopic.Corpus:
    texts = [
        "[d0] The striker scored a late goal in the league match.",
        "[d1] Investors sold shares as inflation hit the bond market.",
        "[d2] The rocket carried a satellite into lunar orbit.",
        "[d3] The coach praised the defender after the penalty.",
    ]
    docs = tuple(
        sumtopic.Document.create(f"d{i}", text, label)
        for i, (text, label) in enumerate(zip(texts, ["sport", "finance", "space", "sport"]))
    )
    return sumtopic.Corpus("tiny", docs, "jsonl")


@pytest.fixture(scope="module")
def planted_corpus() -> sumtopic.Corpus:
    return sumtopic.make_planted_corpus(300, seed=0)


@pytest.fixture
def write_config(tmp_path: Path):
    """Writes a config for an offline-capable run over a small planted corpus.

    Called with a subdirectory name (each gets its own results, cache and work
    directories) and optional section overrides merged into the defaults.
    """
    corpus = sumtopic.make_planted_corpus(150, seed=3, name="planted")
    data = tmp_path / "planted.jsonl"
    sumtopic.save_corpus(corpus, data)

    def write(name: str = "", **sections) -> Path:
        root = tmp_path / name
        root.mkdir(parents=True, exist_ok=True)
        config = {
            "dataset": {"name": "planted", "path": str(data), "format": "jsonl"},
            "summarizer": {"provider": "extractive"},
            "embedder": {"provider": "hashing", "dim": 64},
            "umap": {"n_neighbors": 10, "n_epochs": 100},
            "grid": {
                "diversity_values": [0.1],
                "min_topic_sizes": [10],
                "repeats": 1,
            },
            "output": {
                "out_dir": str(root / "results"),
                "cache_dir": str(root / "cache"),
                "work_dir": str(root / "work"),
            },
        }
        for section, values in sections.items():
            config[section] = {**config.get(section, {}), **values}
        path = root / "config.json"
        path.write_text(json.dumps(config))
        return path

    return write


@pytest.fixture
def planted_config(write_config) -> Path:
    """A config file for an offline run over a small planted corpus."""
    return write_config()


@pytest.fixture
def network_calls(monkeypatch):
    """Fails any HTTP request made through ``requests`` and records its URL."""
    calls = []

    def refuse(url, *args, **kwargs):
        calls.append(url)
        raise AssertionError(f"unexpected network request to {url}")

    monkeypatch.setattr(requests, "post", refuse)
    monkeypatch.setattr(requests, "get", refuse)
    return calls


class FakeCompletionEndpoint:
    """Stands in for ``requests.post`` against a completion endpoint.

    Answers with the first words of the prompt's target document and refuses the
    connection for documents whose text is in ``refused``.
    """

    def __init__(self, refused=()):
        self.refused = set(refused)
        self.answered = set()
        self.n_answered = 0
        self.n_refused = 0
        self._lock = threading.Lock()

    def __call__(self, url, json=None, headers=None, timeout=None):
        document = json["prompt"].rsplit("Document:\n", 1)[1].rsplit("\nSummary:", 1)[0]
        if document in self.refused:
            with self._lock:
                self.n_refused += 1
            raise requests.ConnectionError(f"connection to {url} refused")
        with self._lock:
            self.answered.add(json["prompt"])
            self.n_answered += 1
        return FakeResponse({"choices": [{"text": "Summary: " + " ".join(document.split()[:40])}]})


class FakeResponse:
    status_code = 200

    def __init__(self, payload):
        self._payload = payload

    def raise_for_status(self):
        pass

    def json(self):
        return self._payload


@pytest.fixture
def fake_completions():
    return FakeCompletionEndpoint
