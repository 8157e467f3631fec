import json
from collections import Counter

import pytest

import sumtopic
from sumtopic.cli import build_parser, main


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["model", "--config", "c.yaml", "--min-topic-size", "5"])
    assert (args.input, args.diversity, args.seed, args.offline) == ("full", 0.1, 0, False)


def test_synth(tmp_path, capsys):
    out = tmp_path / "planted.jsonl"

    assert main(["synth", "--out", str(out), "--n-docs", "30", "--seed", "1"]) == 0

    assert "30 planted-topic documents" in capsys.readouterr().out
    corpus = sumtopic.load_corpus(out, "jsonl", name="planted")
    assert corpus.n_documents == 30
    assert corpus == sumtopic.make_planted_corpus(30, seed=1)._replace(name="planted")


def test_ingest(planted_config, tmp_path, capsys):
    assert main(["ingest", "--config", str(planted_config)]) == 0

    out = capsys.readouterr().out
    assert out.startswith("planted: 150 documents, 3 labels")
    assert (tmp_path / "work" / "planted.jsonl").is_file()
    vocab = json.loads((tmp_path / "work" / "planted.vocab.json").read_text())
    assert vocab


def test_summarize_sample(planted_config, tmp_path, capsys):
    argv = ["summarize", "--config", str(planted_config), "--variant", "short", "--sample", "12"]

    assert main(argv + ["--offline"]) == 0
    assert "12 summaries, 12 provider calls, 0 failures" in capsys.readouterr().out

    assert main(argv + ["--offline"]) == 0
    assert "12 summaries, 0 provider calls" in capsys.readouterr().out


def test_model(planted_config, tmp_path, capsys):
    out = tmp_path / "model.json"
    argv = ["model", "--config", str(planted_config), "--offline", "--min-topic-size", "10"]

    assert main(argv + ["--out", str(out)]) == 0

    printed = capsys.readouterr().out
    assert "diversity" in printed and "C_V" in printed
    model = sumtopic.load_topic_model(out)
    assert model.n_topics >= 1
    assert model.params["hdbscan"]["min_cluster_size"] == 10


def test_errors_are_reported(tmp_path, capsys):
    assert main(["ingest", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert capsys.readouterr().err.startswith("sumtopic ingest: error:")

    assert main(["report", "--dir", str(tmp_path)]) == 1
    assert "No records.csv" in capsys.readouterr().err


def test_summarize_short_then_long_fills_both_caches(planted_config, tmp_path, capsys):
    base = ["summarize", "--config", str(planted_config), "--offline"]

    for variant in ("short", "long"):
        assert main(base + ["--variant", variant]) == 0
        assert "150 summaries, 150 provider calls" in capsys.readouterr().out

    cached = [json.loads(p.read_text()) for p in (tmp_path / "cache" / "extractive").glob("*.json")]
    assert Counter(entry["variant"] for entry in cached) == {"short": 150, "long": 150}

    for variant in ("short", "long"):
        assert main(base + ["--variant", variant]) == 0
        assert "150 summaries, 0 provider calls" in capsys.readouterr().out


def test_embed(planted_config, tmp_path, capsys):
    assert main(["embed", "--config", str(planted_config), "--offline", "--input", "short"]) == 0

    assert "150 x 64 embeddings (hashing-d64-s42)" in capsys.readouterr().out
    matrix = sumtopic.load_embeddings(tmp_path / "work" / "planted-short.emb")
    assert len(matrix.doc_ids) == 150


def test_grid_offline(write_config, network_calls, capsys):
    path = write_config(
        summarizer={"provider": "http", "base_url": "http://127.0.0.1:9"},
        embedder={"provider": "http", "base_url": "http://127.0.0.1:9"},
    )

    assert main(["grid", "--config", str(path), "--offline"]) == 0

    assert network_calls == []
    out = capsys.readouterr().out
    assert "best input by diversity:" in out
    records = sumtopic.read_records_csv(path.parent / "results" / "records.csv")
    assert [r.input_type for r in records] == ["full", "short", "long"]
