from pathlib import Path

import pytest
import torch

import sumtopic
from sumtopic import HashingEmbeddingProvider, fallback_embed
from sumtopic.provider import ProviderError


def test_fallback_embed_is_deterministic_and_normalized():
    a = fallback_embed("The rocket reached orbit", dim=64, seed=1)
    b = fallback_embed("The rocket reached orbit", dim=64, seed=1)

    assert torch.equal(a, b)
    assert a.shape == (64,)
    assert torch.linalg.vector_norm(a).item() == pytest.approx(1.0)
    assert not torch.equal(a, fallback_embed("The rocket reached orbit", dim=64, seed=2))


def test_fallback_embed_empty_text():
    assert torch.equal(fallback_embed("the and of", dim=16), torch.zeros(16, dtype=torch.float64))
    with pytest.raises(ValueError):
        fallback_embed("text", dim=4)


def test_fallback_embed_preserves_overlap():
    base = fallback_embed("rocket orbit satellite launch astronaut")
    close = fallback_embed("rocket orbit satellite launch telescope")
    far = fallback_embed("dividend inflation bond equity banking")

    assert sumtopic.cosine(base, close) > sumtopic.cosine(base, far)


def test_cosine():
    assert sumtopic.cosine([1, 0], [0, 2]) == 0.0
    assert sumtopic.cosine([1, 1], [2, 2]) == pytest.approx(1.0)
    assert sumtopic.cosine([0, 0], [1, 2]) == 0.0
    with pytest.raises(ValueError):
        sumtopic.cosine([1, 2, 3], [1, 2])


def test_normalize_rows():
    rows, zero = sumtopic.normalize_rows(torch.tensor([[3.0, 4.0], [0.0, 0.0]]))

    assert torch.allclose(rows[0], torch.tensor([0.6, 0.8], dtype=torch.float64))
    assert torch.equal(rows[1], torch.zeros(2, dtype=torch.float64))
    assert zero == (1,)


def test_embed_corpus(tiny_corpus):
    provider = HashingEmbeddingProvider(dim=32, seed=0)
    empty = sumtopic.Document.create("d4", "the of and")
    corpus = tiny_corpus._replace(documents=tiny_corpus.documents + (empty,))

    matrix = sumtopic.embed_corpus(corpus, provider, batch_size=2)

    assert matrix.doc_ids == tuple(corpus.ids)
    assert matrix.dim == 32
    assert matrix.rows.dtype == torch.float32
    assert matrix.rows.shape == (5, 32)
    assert matrix.zero_rows == (4,)
    assert matrix.provider_id == "hashing-d32-s0"
    assert matrix.corpus_hash == sumtopic.corpus_hash(corpus)
    norms = torch.linalg.vector_norm(matrix.rows[:4].double(), dim=1)
    assert torch.allclose(norms, torch.ones(4, dtype=torch.float64), atol=1e-6)


def test_embed_corpus_independent_of_batching(tiny_corpus):
    provider = HashingEmbeddingProvider(dim=32)
    a = sumtopic.embed_corpus(tiny_corpus, provider, batch_size=1, concurrency_limit=3)
    b = sumtopic.embed_corpus(tiny_corpus, provider, batch_size=64)

    assert torch.equal(a.rows, b.rows)


def test_embed_terms():
    provider = HashingEmbeddingProvider(dim=16)
    vectors = sumtopic.embed_terms(["orbit", "rocket", "orbit"], provider)

    assert sorted(vectors) == ["orbit", "rocket"]
    assert torch.allclose(vectors["orbit"], fallback_embed("orbit", 16))
    assert sumtopic.embed_terms([], provider) == {}


def test_save_and_load_embeddings(tmp_path: Path, tiny_corpus):
    provider = HashingEmbeddingProvider(dim=16)
    path = tmp_path / "emb" / "tiny.emb"
    matrix = sumtopic.embed_corpus(tiny_corpus, provider, out_path=path)

    loaded = sumtopic.load_embeddings(path)

    assert loaded.doc_ids == matrix.doc_ids
    assert torch.equal(loaded.rows, matrix.rows)
    assert loaded.provider_id == matrix.provider_id
    assert loaded.corpus_hash == matrix.corpus_hash


def test_load_embeddings_rejects_reduced(tmp_path: Path):
    reduced = sumtopic.ReducedMatrix(("a", "b"), torch.zeros((2, 2), dtype=torch.float64), 0, 1.5, 0.9)
    path = sumtopic.save_reduced(reduced, tmp_path / "r.emb")

    with pytest.raises(ValueError, match="not embeddings"):
        sumtopic.load_embeddings(path)
    again = sumtopic.load_reduced(path)
    assert (again.a, again.b, again.n_clamped) == (1.5, 0.9, 0)


def test_make_embedding_provider():
    config = sumtopic.EmbedderConfig(provider="http", dim=48)

    assert isinstance(sumtopic.make_embedding_provider(config), sumtopic.HttpEmbeddingProvider)
    offline = sumtopic.make_embedding_provider(config, offline=True)
    assert offline.provider_id == "hashing-d48-s42"
    with pytest.raises(ValueError):
        sumtopic.make_embedding_provider(sumtopic.EmbedderConfig(provider="word2vec"))


def test_http_embedding_provider(monkeypatch):
    def fake_post(url, payload, *, headers, **kwargs):
        n = len(payload["input"])
        data = [{"index": i, "embedding": [float(i), 1.0, 0.0]} for i in range(n)]
        return {"data": list(reversed(data))}

    monkeypatch.setattr("sumtopic.embed.post_json", fake_post)
    provider = sumtopic.HttpEmbeddingProvider(sumtopic.EmbedderConfig(provider="http"))

    vectors = provider.embed_batch(["a", "b", "c"])

    assert vectors[:, 0].tolist() == [0.0, 1.0, 2.0]
    assert provider.dim == 3
    assert provider.provider_id == "http-text-embedding-3-small"


def test_http_embedding_provider_malformed(monkeypatch):
    monkeypatch.setattr("sumtopic.embed.post_json", lambda *a, **k: {"data": [{"vector": []}]})
    provider = sumtopic.HttpEmbeddingProvider(sumtopic.EmbedderConfig(provider="http"))

    with pytest.raises(ProviderError):
        provider.embed_batch(["a"])
