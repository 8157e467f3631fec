import math

import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings, strategies as st

import sumtopic
from sumtopic import FuzzyGraph, KnnResult, SmoothKnn, UmapParams
from sumtopic.reduce import fit_ab, knn_exact, smooth_knn, smooth_knn_batch


def blobs(n_per_blob, dim, centers, scale, seed):
    generator = torch.Generator().manual_seed(seed)
    points, labels = [], []
    for label, center in enumerate(centers):
        points.append(center + scale * torch.randn((n_per_blob, dim), generator=generator, dtype=torch.float64))
        labels += [label] * n_per_blob
    return torch.cat(points), torch.tensor(labels)


def test_knn_collinear_points():
    X = torch.tensor([[0.0], [1.0], [10.0]])
    knn = knn_exact(X, 1, metric="euclidean")

    assert knn.indices.flatten().tolist() == [1, 0, 1]
    assert knn.distances.flatten().tolist() == [1.0, 1.0, 9.0]


def test_knn_duplicates_lower_index_first():
    X = torch.tensor([[1.0, 1.0], [5.0, 5.0], [1.0, 1.0], [1.0, 1.0]])
    knn = knn_exact(X, 2, metric="euclidean")

    assert knn.indices[0].tolist() == [2, 3]
    assert knn.indices[3].tolist() == [0, 2]
    assert knn.distances[0].tolist() == [0.0, 0.0]


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_knn_matches_full_sort(metric):
    X = torch.randn((100, 8), generator=torch.Generator().manual_seed(0))
    knn = knn_exact(X, 10, metric=metric)

    full = sumtopic.pairwise_distances(X, metric=metric)
    for i in range(100):
        others = sorted((float(full[i, j]), j) for j in range(100) if j != i)[:10]
        assert knn.indices[i].tolist() == [j for _, j in others]
        assert torch.allclose(knn.distances[i], torch.tensor([d for d, _ in others], dtype=torch.float64))


def test_knn_rejects_large_k():
    with pytest.raises(ValueError):
        knn_exact(torch.zeros((3, 2)), 3)


def test_cosine_distance():
    D = sumtopic.pairwise_distances(
        torch.tensor([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]), metric="cosine"
    )
    assert D[0, 1].item() == pytest.approx(1.0)
    assert D[0, 0].item() == pytest.approx(0.0)
    assert D[2, 0].item() == pytest.approx(1.0)


def test_smooth_knn_closed_form():
    rho, sigma, clamped = smooth_knn([1.0, 2.0, 3.0])

    # x + x^2 = log2(3) - 1 with x = exp(-1 / sigma)
    x = (-1 + math.sqrt(1 + 4 * (math.log2(3) - 1))) / 2
    assert rho == 1.0
    assert sigma == pytest.approx(-1 / math.log(x), abs=1e-3)
    assert sigma == pytest.approx(1.1334, abs=1e-3)
    assert not clamped


def test_smooth_knn_equal_distances_clamp():
    rho, sigma, clamped = smooth_knn([2.0, 2.0, 2.0, 2.0])

    assert rho == 2.0
    assert clamped
    assert sigma == pytest.approx(1e-3 * 2.0)


def test_smooth_knn_all_zero():
    calibration = smooth_knn_batch(torch.zeros((1, 3)))

    assert calibration.rho.tolist() == [0.0]
    assert calibration.clamped.tolist() == [True]

    X = torch.zeros((4, 3))
    knn = knn_exact(X, 3, metric="euclidean")
    graph = sumtopic.fuzzy_simplicial_set(knn, smooth_knn_batch(knn.distances))
    assert graph.weight.tolist() == [1.0] * 6


def test_smooth_knn_checks_length():
    with pytest.raises(ValueError):
        smooth_knn([1.0, 2.0], k=3)
    with pytest.raises(ValueError):
        smooth_knn([1.0])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.floats(min_value=0.01, max_value=10.0, allow_nan=False), min_size=2, max_size=30
    )
)
def test_smooth_knn_residual(distances):
    distances = sorted(distances)
    rho, sigma, clamped = smooth_knn(distances)
    assume(not clamped)

    total = sum(math.exp(-max(0.0, d - rho) / sigma) for d in distances)
    assert abs(total - math.log2(len(distances))) < 1e-4


def graph_from(n, directed):
    """kNN result with one neighbor per point from ``{i: (j, weight)}`` at rho 0,
    sigma 1."""
    indices = torch.tensor([[directed[i][0]] for i in range(n)])
    distances = torch.tensor([[-math.log(directed[i][1])] for i in range(n)], dtype=torch.float64)
    calibration = SmoothKnn(
        torch.zeros(n, dtype=torch.float64), torch.ones(n, dtype=torch.float64), torch.zeros(n, dtype=torch.bool)
    )
    return sumtopic.fuzzy_simplicial_set(KnnResult(indices, distances), calibration)


@pytest.mark.parametrize(
    "a, b, expected",
    [(1.0, 1.0, 1.0), (0.5, 0.5, 0.75)],
)
def test_t_conorm(a, b, expected):
    graph = graph_from(2, {0: (1, a), 1: (0, b)})

    assert graph.head.tolist() == [0]
    assert graph.tail.tolist() == [1]
    assert graph.weight[0].item() == pytest.approx(expected)


def test_t_conorm_one_sided_edge():
    graph = graph_from(3, {0: (1, 0.5), 1: (2, 1.0), 2: (1, 1.0)})
    dense = graph.to_dense()

    assert dense[0, 1].item() == pytest.approx(0.5)
    assert dense[1, 2].item() == pytest.approx(1.0)
    assert dense[0, 2].item() == 0.0


def test_fuzzy_graph_is_symmetric():
    X = torch.randn((60, 5), generator=torch.Generator().manual_seed(1))
    knn = knn_exact(X, 6)
    graph = sumtopic.fuzzy_simplicial_set(knn, smooth_knn_batch(knn.distances))
    dense = graph.to_dense()

    assert torch.equal(dense, dense.T)
    assert torch.all(dense.diagonal() == 0)
    assert torch.all(graph.head < graph.tail)
    assert torch.all((graph.weight > 0) & (graph.weight <= 1))


def curve(d, a, b):
    return 1.0 / (1.0 + a * d ** (2 * b))


def test_fit_ab_defaults():
    a, b, rms = fit_ab(0.0, 1.0)

    assert rms < 0.02
    assert curve(0.0, a, b) == pytest.approx(1.0, abs=1e-3)
    for d in np.linspace(0.05, 2.95, 10):
        assert abs(curve(d, a, b) - math.exp(-d)) < 0.1


def test_fit_ab_larger_min_dist_is_flatter():
    a, b, _ = fit_ab(0.5, 1.0)

    assert curve(0.5, a, b) >= 0.9
    assert curve(0.0, a, b) == pytest.approx(1.0, abs=1e-3)


def test_fit_ab_rejects_bad_spread():
    with pytest.raises(ValueError):
        fit_ab(0.1, 0.0)


def two_component_graph(n=50):
    heads, tails = [], []
    for offset in (0, n):
        for i in range(n):
            for step in range(1, 6):
                j = (i + step) % n
                heads.append(offset + min(i, j))
                tails.append(offset + max(i, j))
    pairs = sorted(set(zip(heads, tails)))
    return FuzzyGraph(
        2 * n,
        torch.tensor([p[0] for p in pairs]),
        torch.tensor([p[1] for p in pairs]),
        torch.ones(len(pairs), dtype=torch.float64),
    )


def test_optimize_layout_is_deterministic():
    graph = two_component_graph()
    params = UmapParams(n_epochs=50, seed=7)

    first = sumtopic.optimize_layout(graph, params)
    second = sumtopic.optimize_layout(graph, params)

    assert first.shape == (100, 5)
    assert torch.equal(first, second)
    assert not torch.equal(first, sumtopic.optimize_layout(graph, params._replace(seed=8)))
    assert torch.all(torch.isfinite(first))
    assert torch.all(first.abs() < 1e4)


def test_optimize_layout_separates_components():
    graph = two_component_graph()
    Y = sumtopic.optimize_layout(graph, UmapParams(n_components=2, seed=0))

    D = torch.cdist(Y, Y)
    intra = torch.cat([D[:50, :50].flatten(), D[50:, 50:].flatten()]).mean()
    inter = D[:50, 50:].mean()
    assert inter > intra


def test_umap_fit_transform_purity():
    centers = [torch.zeros(256, dtype=torch.float64) for _ in range(3)]
    for k, c in enumerate(centers):
        c[k * 10 : k * 10 + 10] = 1.0
    X, labels = blobs(100, 256, centers, 0.05, seed=2)

    reduced = sumtopic.umap_fit_transform(X, UmapParams(seed=0))

    assert reduced.coords.shape == (300, 5)
    assert reduced.doc_ids == tuple(str(i) for i in range(300))
    centroids = torch.stack([reduced.coords[labels == k].mean(dim=0) for k in range(3)])
    nearest = torch.cdist(reduced.coords, centroids).argmin(dim=1)
    assert (nearest == labels).double().mean().item() >= 0.9


def test_umap_fit_transform_accepts_embeddings():
    corpus = sumtopic.make_planted_corpus(40, seed=1)
    matrix = sumtopic.embed_corpus(corpus, sumtopic.HashingEmbeddingProvider(dim=32))

    reduced = sumtopic.umap_fit_transform(matrix, UmapParams(n_neighbors=5, n_epochs=30))

    assert reduced.doc_ids == matrix.doc_ids
    assert reduced.coords.shape == (40, 5)


def test_umap_fit_transform_needs_more_points():
    with pytest.raises(ValueError, match="more points than n_neighbors"):
        sumtopic.umap_fit_transform(torch.randn((15, 4)), UmapParams(n_neighbors=15))


def test_umap_fit_transform_duplicates():
    X = torch.cat([torch.ones((20, 4)), torch.zeros((20, 4)) + torch.tensor([1.0, 0, 0, 0])])
    reduced = sumtopic.umap_fit_transform(X, UmapParams(n_neighbors=5, n_epochs=20))

    assert reduced.n_clamped == 40
    assert torch.all(torch.isfinite(reduced.coords))


def test_umap_params_validate():
    with pytest.raises(ValueError, match="n_components"):
        UmapParams(n_components=1).validate(100)
    with pytest.raises(ValueError, match="min_dist"):
        UmapParams(min_dist=-0.1).validate(100)
    with pytest.raises(ValueError, match="metric"):
        UmapParams(metric="manhattan").validate(100)
    assert UmapParams().validate(100) == UmapParams()


def test_save_and_load_reduced(tmp_path):
    reduced = sumtopic.umap_fit_transform(
        torch.randn((30, 6), generator=torch.Generator().manual_seed(0)),
        UmapParams(n_neighbors=5, n_epochs=10),
    )
    path = sumtopic.save_reduced(reduced, tmp_path / "reduced.bin")
    loaded = sumtopic.load_reduced(path)

    assert loaded.doc_ids == reduced.doc_ids
    assert loaded.a == reduced.a
    assert loaded.b == reduced.b
    assert torch.allclose(loaded.coords, reduced.coords, rtol=1e-6, atol=1e-4)
