import json
import random
import re
from itertools import product
from pathlib import Path

import pytest
import requests

import sumtopic
from sumtopic import GridConfig, GridResult, MetricsRecord, UmapParams
from sumtopic.runner import SUMMARY_COLUMNS

DIVERSITIES = (0.1, 0.2, 0.3)
SIZES = (10, 15, 20)
LEVELS = {"full": 0.6, "short": 0.8, "long": 0.7}


@pytest.fixture
def grid_records() -> tuple[MetricsRecord, ...]:
    """81 records of a 3 x 3 x 3 grid with three repeats. Every repeat of
    ``(long, 0.2, 10)`` and one repeat of ``(long, 0.3, 20)`` are degenerate.
    """
    rng = random.Random(7)
    records = []
    for t, d, m, r in product(("full", "short", "long"), DIVERSITIES, SIZES, range(3)):
        if (t, d, m) == ("long", 0.2, 10) or ((t, d, m, r) == ("long", 0.3, 20, 1)):
            records.append(sumtopic.degenerate_record("news", t, d, m, r, error="no topics"))
            continue
        records.append(
            MetricsRecord(
                dataset="news",
                input_type=t,
                diversity_param=d,
                min_topic_size=m,
                seed=r,
                n_topics=rng.randint(2, 40),
                diversity=LEVELS[t] + rng.uniform(-0.05, 0.05),
                coherence_cv=LEVELS[t] - 0.2 + rng.uniform(-0.05, 0.05),
                degenerate=False,
            )
        )
    return tuple(records)


@pytest.fixture
def grid_result(grid_records) -> GridResult:
    cells, types = sumtopic.aggregate(grid_records)
    return GridResult("news", grid_records, cells, types)


def test_aggregate_matches_direct_means(grid_records):
    cells, types = sumtopic.aggregate(grid_records)

    assert len(cells) == 27
    assert [(c.input_type, c.diversity_param, c.min_topic_size) for c in cells] == list(
        product(("full", "short", "long"), DIVERSITIES, SIZES)
    )
    for cell in cells:
        members = [
            r
            for r in grid_records
            if (r.input_type, r.diversity_param, r.min_topic_size)
            == (cell.input_type, cell.diversity_param, cell.min_topic_size)
        ]
        ok = [r for r in members if not r.degenerate]
        assert cell.n_runs == 3
        assert cell.n_excluded == 3 - len(ok)
        if ok:
            assert cell.diversity == pytest.approx(sum(r.diversity for r in ok) / len(ok), abs=1e-12)
            assert cell.coherence_cv == pytest.approx(
                sum(r.coherence_cv for r in ok) / len(ok), abs=1e-12
            )
        else:
            assert cell.undefined
            assert cell.diversity is None and cell.coherence_cv is None

    assert [m.input_type for m in types] == ["full", "short", "long"]
    for mean in types:
        defined = [c for c in cells if c.input_type == mean.input_type and not c.undefined]
        values = [c.diversity for c in defined]
        assert mean.n_cells == 9
        assert mean.diversity == pytest.approx(sum(values) / len(values), abs=1e-12)
        assert mean.diversity_min == min(values)
        assert mean.diversity_max == max(values)
    long_mean = types[2]
    assert long_mean.n_excluded == 4


def test_aggregate_survives_csv(grid_records, tmp_path):
    path = sumtopic.write_records_csv(grid_records, tmp_path / "records.csv")

    assert sumtopic.aggregate(sumtopic.read_records_csv(path)) == sumtopic.aggregate(grid_records)


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        sumtopic.aggregate([])


def test_best_input_type(grid_result):
    assert grid_result.best_input_type("diversity") == "short"
    assert grid_result.best_input_type("coherence_cv") == "short"

    degenerate = [sumtopic.degenerate_record("news", "full", 0.1, 10, s) for s in range(2)]
    cells, types = sumtopic.aggregate(degenerate)
    assert GridResult("news", tuple(degenerate), cells, types).best_input_type() is None


def polylines(svg: str) -> dict[str, list[list[tuple[float, float]]]]:
    found: dict[str, list[list[tuple[float, float]]]] = {}
    for name, points in re.findall(r'<polyline data-series="([^"]+)" points="([^"]+)"', svg):
        pairs = [tuple(float(v) for v in p.split(",")) for p in points.split()]
        found.setdefault(name, []).append(pairs)
    return found


def test_emit_report(grid_result, tmp_path):
    out = tmp_path / "report"
    paths = sumtopic.emit_report(grid_result, out, manifest={"dataset": "news"})

    assert sorted(p.name for p in paths) == [
        "coherence.svg",
        "diversity.svg",
        "records.csv",
        "run-manifest.json",
        "summary.csv",
    ]
    assert len((out / "records.csv").read_text().splitlines()) == 82

    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == ",".join(SUMMARY_COLUMNS)
    assert len(summary) == 1 + 27 + 3
    assert summary[1].startswith("cell,full,0.1,10,3,0,")
    undefined = [line for line in summary if line.startswith("cell,long,0.2,10,")]
    assert undefined == ["cell,long,0.2,10,3,3,,,,,,"]
    assert summary[-1].startswith("input_type,long,,,9,4,")
    assert json.loads((out / "run-manifest.json").read_text()) == {"dataset": "news"}


def test_report_charts(grid_result, tmp_path):
    sumtopic.emit_report(grid_result, tmp_path)
    lines = polylines((tmp_path / "diversity.svg").read_text())

    assert set(lines) == {"full", "short", "long"}
    (full,), (short,) = lines["full"], lines["short"]
    assert len(full) == len(short) == 9
    for (x_full, y_full), (x_short, y_short) in zip(full, short):
        assert x_full == x_short
        # higher values are drawn higher up
        assert y_short < y_full
    # the undefined long cell breaks its line
    assert len(lines["long"]) == 2
    assert sum(len(segment) for segment in lines["long"]) == 8


def test_regenerate_report(grid_result, tmp_path):
    sumtopic.emit_report(grid_result, tmp_path)
    summary = (tmp_path / "summary.csv").read_text()
    chart = (tmp_path / "coherence.svg").read_text()
    (tmp_path / "summary.csv").unlink()

    again = sumtopic.regenerate_report(tmp_path)

    assert (tmp_path / "summary.csv").read_text() == summary
    assert (tmp_path / "coherence.svg").read_text() == chart
    assert again.cell_means == grid_result.cell_means


def test_regenerate_report_needs_records(tmp_path):
    with pytest.raises(FileNotFoundError):
        sumtopic.regenerate_report(tmp_path)


def test_emit_report_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        sumtopic.emit_report(GridResult("x", (), (), ()), tmp_path)


@pytest.fixture(scope="module")
def short_summaries(planted_corpus):
    texts = [sumtopic.truncate_words(doc, 30).text for doc in planted_corpus.documents]
    return planted_corpus.with_texts(texts, name="planted-short")


def test_run_grid(planted_corpus, short_summaries):
    config = GridConfig(
        diversity_values=(0.1,),
        min_topic_sizes=(15,),
        input_types=("full", "short"),
        repeats=2,
        base_seed=5,
    )
    provider = sumtopic.HashingEmbeddingProvider(dim=64)
    umap_params = UmapParams(n_epochs=50)

    result = sumtopic.run_grid(
        config, planted_corpus, {"short": short_summaries}, provider, umap_params
    )

    assert result.dataset == "planted"
    assert [(r.input_type, r.seed) for r in result.records] == [
        ("full", 5), ("full", 6), ("short", 5), ("short", 6)
    ]
    assert all(r.min_topic_size == 15 and r.diversity_param == 0.1 for r in result.records)
    assert set(result.timings) == {
        "full/d=0.1/m=15/seed=5",
        "full/d=0.1/m=15/seed=6",
        "short/d=0.1/m=15/seed=5",
        "short/d=0.1/m=15/seed=6",
    }
    assert len(result.cell_means) == 2
    full = result.records[0]
    assert not full.degenerate
    assert full.n_topics >= 2

    parallel = sumtopic.run_grid(
        config._replace(workers=2), planted_corpus, {"short": short_summaries}, provider, umap_params
    )
    assert parallel.records == result.records


def test_run_grid_checks_summaries(planted_corpus, tiny_corpus):
    config = GridConfig(min_topic_sizes=(15,), input_types=("full", "short"), repeats=1)
    provider = sumtopic.HashingEmbeddingProvider(dim=16)

    with pytest.raises(ValueError, match="No summary corpus"):
        sumtopic.run_grid(config, planted_corpus, {}, provider)
    with pytest.raises(ValueError, match="not aligned"):
        sumtopic.run_grid(config, planted_corpus, {"short": tiny_corpus}, provider)
    with pytest.raises(ValueError, match="repeats"):
        sumtopic.run_grid(config._replace(repeats=0), planted_corpus, {}, provider)


def test_run_grid_records_degenerate_cells(planted_corpus):
    config = GridConfig(
        diversity_values=(0.1,), min_topic_sizes=(200,), input_types=("full",), repeats=1
    )

    result = sumtopic.run_grid(
        config, planted_corpus, {}, sumtopic.HashingEmbeddingProvider(dim=32), UmapParams(n_epochs=30)
    )

    (record,) = result.records
    assert record.degenerate
    assert record.error
    assert result.cell_means[0].undefined
    assert result.best_input_type() is None


def test_run_experiment_offline(planted_config, tmp_path):
    config = sumtopic.loadConfig(planted_config)

    result = sumtopic.run_experiment(config, offline=True)

    assert [r.input_type for r in result.records] == ["full", "short", "long"]
    out = tmp_path / "results"
    for name in ("records.csv", "summary.csv", "diversity.svg", "coherence.svg"):
        assert (out / name).is_file()
    manifest = json.loads((out / "run-manifest.json").read_text())
    assert manifest["dataset"] == "planted"
    assert manifest["n_documents"] == 150
    assert manifest["offline"] is True
    assert manifest["providers"]["embedder"] == "hashing-d64-s42"
    assert set(manifest["timings"]) == {f"{t}/d=0.1/m=10/seed=0" for t in ("full", "short", "long")}
    assert (tmp_path / "work" / "planted-full.emb").is_file()
    assert any((tmp_path / "cache").rglob("*.json"))

    rerun = sumtopic.run_experiment(config, offline=True)
    assert rerun.records == result.records


def test_default_grid_is_complete(planted_corpus, short_summaries):
    long_texts = [sumtopic.truncate_words(doc, 50).text for doc in planted_corpus.documents]
    summaries = {
        "short": short_summaries,
        "long": planted_corpus.with_texts(long_texts, name="planted-long"),
    }
    # 400 exceeds the corpus size, so its cells can only be degenerate
    config = GridConfig(min_topic_sizes=(10, 15, 400))

    result = sumtopic.run_grid(
        config,
        planted_corpus,
        summaries,
        sumtopic.HashingEmbeddingProvider(dim=32),
        UmapParams(n_epochs=30),
    )

    assert len(result.records) == 81
    assert [
        (r.input_type, r.diversity_param, r.min_topic_size, r.seed) for r in result.records
    ] == list(product(sumtopic.INPUT_TYPES, DIVERSITIES, (10, 15, 400), range(3)))
    for record in result.records:
        if record.min_topic_size == 400:
            assert record.degenerate
            assert "Cannot cluster" in record.error
    assert sum(not r.degenerate for r in result.records) > 0

    assert len(result.cell_means) == 27
    assert all(cell.n_runs == 3 for cell in result.cell_means)
    assert all(cell.undefined for cell in result.cell_means if cell.min_topic_size == 400)
    assert len(result.timings) == 81


def test_offline_experiment_never_touches_the_network(write_config, network_calls):
    path = write_config(
        summarizer={"provider": "http", "base_url": "http://127.0.0.1:9"},
        embedder={"provider": "http", "base_url": "http://127.0.0.1:9"},
    )
    config = sumtopic.loadConfig(path)
    assert isinstance(
        sumtopic.make_completion_provider(config.summarizer), sumtopic.HttpCompletionProvider
    )

    result = sumtopic.run_experiment(config, offline=True)

    assert network_calls == []
    assert [r.input_type for r in result.records] == ["full", "short", "long"]
    manifest = json.loads((path.parent / "results" / "run-manifest.json").read_text())
    assert manifest["providers"] == {"summarizer": "extractive", "embedder": "hashing-d64-s42"}


def test_offline_experiment_outputs_are_byte_identical(write_config):
    first = sumtopic.loadConfig(write_config("first"))
    second = sumtopic.loadConfig(write_config("second"))

    a = sumtopic.run_experiment(first, offline=True)
    b = sumtopic.run_experiment(second, offline=True)

    assert a.records == b.records
    for name in ("records.csv", "summary.csv", "diversity.svg", "coherence.svg"):
        assert (Path(first.output.out_dir) / name).read_bytes() == (
            Path(second.output.out_dir) / name
        ).read_bytes()


def test_failed_summaries_fall_back_inside_a_full_run(
    write_config, fake_completions, monkeypatch
):
    path = write_config(
        "http",
        summarizer={
            "provider": "http",
            "base_url": "http://summaries.test",
            "api_key_env": "",
            "max_attempts": 1,
            "backoff_seconds": 0.0,
        },
    )
    config = sumtopic.loadConfig(path)
    corpus = sumtopic.load_dataset(config)
    endpoint = fake_completions(refused=[doc.text for doc in corpus.documents[:3]])
    monkeypatch.setattr(requests, "post", endpoint)

    result = sumtopic.run_experiment(config)

    # three refused documents for each of the two summary lengths
    assert endpoint.n_refused == 6
    assert [r.input_type for r in result.records] == ["full", "short", "long"]
    cached = list(Path(config.output.cache_dir).rglob("*.json"))
    assert len(cached) == len(endpoint.answered) == endpoint.n_answered

    again = sumtopic.run_experiment(config)

    assert again.records == result.records
    assert endpoint.n_refused == 12
    assert endpoint.n_answered == len(cached)
