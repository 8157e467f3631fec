r"""UMAP dimensionality reduction.

The reduction runs in four stages, each exposed as a function:

1. :func:`knn_exact` finds the ``n_neighbors`` nearest neighbors of every point by
   brute force.
2. :func:`smooth_knn` calibrates, per point, the distance to its nearest neighbor
   :math:`\rho` and a bandwidth :math:`\sigma` solving

   .. math::

       \sum_j \exp\left(-\frac{\max(0, d_j - \rho)}{\sigma}\right) = \log_2 k

3. :func:`fuzzy_simplicial_set` turns the calibrated distances into directed
   memberships and symmetrizes them with the probabilistic t-conorm
   :math:`a + b - ab`.
4. :func:`optimize_layout` embeds the graph in ``n_components`` dimensions by
   stochastic gradient descent on attractive edge samples and repulsive negative
   samples, using the curve :math:`1 / (1 + a d^{2b})` fit by :func:`fit_ab`.

:func:`umap_fit_transform` chains the stages.
"""
from __future__ import annotations
import logging
import math
from typing import Literal, NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse
import torch
from scipy.optimize import curve_fit

from sumtopic.matrixio import load_matrix, save_matrix

__all__ = [
    "Metric",
    "UmapParams",
    "KnnResult",
    "SmoothKnn",
    "FuzzyGraph",
    "ReducedMatrix",
    "pairwise_distances",
    "knn_exact",
    "smooth_knn",
    "smooth_knn_batch",
    "fuzzy_simplicial_set",
    "fit_ab",
    "optimize_layout",
    "umap_fit_transform",
    "save_reduced",
    "load_reduced",
]

Metric = Literal["cosine", "euclidean"]

SMOOTH_K_TOLERANCE = 1e-5
MIN_K_DIST_SCALE = 1e-3
MAX_K_DIST_SCALE = 1e3
_BLOCK = 1024


class UmapParams(NamedTuple):
    """Settings of :func:`umap_fit_transform`.

    Args:
        n_neighbors (int): Size of the local neighborhood. Defaults to 15.
        n_components (int): Output dimension. Defaults to 5.
        min_dist (float): Minimum spacing of points in the layout. Defaults to 0.0.
        spread (float): Scale of the layout. Defaults to 1.0.
        n_epochs (int): Optimization epochs. Defaults to 200.
        negative_sample_rate (int): Repulsive samples per attractive sample.
        initial_learning_rate (float): Learning rate of the first epoch.
        metric (Metric): ``'cosine'`` or ``'euclidean'``.
        seed (int): Seed of the initialization and of negative sampling.
    """

    n_neighbors: int = 15
    n_components: int = 5
    min_dist: float = 0.0
    spread: float = 1.0
    n_epochs: int = 200
    negative_sample_rate: int = 5
    initial_learning_rate: float = 1.0
    metric: Metric = "cosine"
    seed: int = 0

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)

    def validate(self, n_points: int) -> UmapParams:
        """Checks the parameters against a dataset of ``n_points`` rows.

        Raises:
            ValueError: If ``n_neighbors`` is not in ``[2, n_points)``,
              ``n_components < 2``, ``min_dist < 0``, ``spread <= 0`` or the metric
              is unknown.
        """
        if not 2 <= self.n_neighbors < n_points:
            raise ValueError(
                f"n_neighbors must satisfy 2 <= n_neighbors < n_points "
                f"(got n_neighbors={self.n_neighbors}, n_points={n_points})"
            )
        if self.n_components < 2:
            raise ValueError(f"n_components must be at least 2, got {self.n_components}")
        if self.min_dist < 0:
            raise ValueError(f"min_dist must be nonnegative, got {self.min_dist}")
        if self.spread <= 0:
            raise ValueError(f"spread must be positive, got {self.spread}")
        if self.metric not in ("cosine", "euclidean"):
            raise ValueError(f"Unknown metric '{self.metric}'")
        return self


class KnnResult(NamedTuple):
    """Neighbor indices and distances, both of shape ``(n, k)``, ascending."""

    indices: torch.Tensor
    distances: torch.Tensor


class SmoothKnn(NamedTuple):
    """Per-point calibration. ``clamped`` marks bandwidths forced to the bounds."""

    rho: torch.Tensor
    sigma: torch.Tensor
    clamped: torch.Tensor


class FuzzyGraph(NamedTuple):
    """Symmetric weighted graph stored as unique edges ``head < tail``.

    Args:
        n (int): Number of vertices.
        head (torch.Tensor): First endpoint of each edge.
        tail (torch.Tensor): Second endpoint of each edge.
        weight (torch.Tensor): Membership strength in ``(0, 1]``.
    """

    n: int
    head: torch.Tensor
    tail: torch.Tensor
    weight: torch.Tensor

    def to_dense(self) -> torch.Tensor:
        dense = torch.zeros((self.n, self.n), dtype=torch.float64)
        dense[self.head, self.tail] = self.weight
        dense[self.tail, self.head] = self.weight
        return dense


class ReducedMatrix(NamedTuple):
    """Low-dimensional coordinates, row-aligned with the input.

    Args:
        doc_ids (tuple[str, ...]): Ids in row order.
        coords (torch.Tensor): ``float64`` tensor of shape ``(n, n_components)``.
        n_clamped (int): Points whose bandwidth hit a clamp.
        a (float): Fitted curve parameter.
        b (float): Fitted curve parameter.
    """

    doc_ids: tuple[str, ...]
    coords: torch.Tensor
    n_clamped: int
    a: float
    b: float


def pairwise_distances(
    X: torch.Tensor, Y: Optional[torch.Tensor] = None, metric: Metric = "euclidean"
) -> torch.Tensor:
    """Dense distance matrix in ``float64``. Cosine distance is ``1 - cosine``,
    with zero vectors at cosine 0.
    """
    X = X.to(torch.float64)
    Y = X if Y is None else Y.to(torch.float64)
    if metric == "euclidean":
        return torch.cdist(X, Y, compute_mode="donot_use_mm_for_euclid_dist")
    if metric == "cosine":
        xn = torch.linalg.vector_norm(X, dim=1, keepdim=True)
        yn = torch.linalg.vector_norm(Y, dim=1, keepdim=True)
        Xu = X / torch.where(xn == 0, torch.ones_like(xn), xn)
        Yu = Y / torch.where(yn == 0, torch.ones_like(yn), yn)
        return torch.clamp(1.0 - Xu @ Yu.T, min=0.0)
    raise ValueError(f"Unknown metric '{metric}'")


def knn_exact(X: torch.Tensor, k: int, metric: Metric = "cosine") -> KnnResult:
    """Exact k-nearest neighbors of every row of ``X``, excluding the row itself.

    Ties are broken by lower index.

    Raises:
        ValueError: If ``k`` is not smaller than the number of rows.
    """
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (got k={k}, n={n})")

    indices = torch.empty((n, k), dtype=torch.long)
    distances = torch.empty((n, k), dtype=torch.float64)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        block = pairwise_distances(X[start:stop], X, metric)
        rows = torch.arange(stop - start)
        block[rows, rows + start] = math.inf
        # stable sort keeps equal distances in index order
        sorted_d, order = torch.sort(block, dim=1, stable=True)
        indices[start:stop] = order[:, :k]
        distances[start:stop] = sorted_d[:, :k]
    return KnnResult(indices, distances)


def smooth_knn_batch(distances: torch.Tensor, n_iter: int = 64) -> SmoothKnn:
    """Vectorized :func:`smooth_knn` over the rows of an ``(n, k)`` distance matrix.

    Rows whose mean distance is zero are clamped relative to the mean distance of
    the whole matrix, or 1 if that is zero too.
    """
    d = distances.to(torch.float64)
    n, k = d.shape
    target = math.log2(k)

    positive = torch.where(d > 0, d, torch.full_like(d, math.inf))
    rho = positive.min(dim=1).values
    rho = torch.where(torch.isinf(rho), torch.zeros_like(rho), rho)

    shifted = torch.clamp(d - rho.unsqueeze(1), min=0.0)
    # Terms at or below rho contribute 1 for every sigma; if they alone reach the
    # target, no bandwidth solves the equation.
    unattainable = (shifted <= 0).sum(dim=1).to(torch.float64) >= target

    lo = torch.zeros(n, dtype=torch.float64)
    hi = torch.full((n,), math.inf, dtype=torch.float64)
    mid = torch.ones(n, dtype=torch.float64)
    done = unattainable.clone()
    for _ in range(n_iter):
        psum = torch.exp(-shifted / mid.unsqueeze(1)).sum(dim=1)
        done = done | (torch.abs(psum - target) < SMOOTH_K_TOLERANCE)
        if bool(done.all()):
            break
        too_big = (psum > target) & ~done
        too_small = (psum <= target) & ~done
        hi = torch.where(too_big, mid, hi)
        lo = torch.where(too_small, mid, lo)
        mid = torch.where(
            too_big | (too_small & torch.isfinite(hi)),
            (lo + hi) / 2.0,
            torch.where(too_small, mid * 2.0, mid),
        )

    row_mean = d.mean(dim=1)
    global_mean = float(d.mean())
    scale = torch.where(
        row_mean > 0, row_mean, torch.full_like(row_mean, global_mean or 1.0)
    )
    lower = MIN_K_DIST_SCALE * scale
    upper = MAX_K_DIST_SCALE * scale
    sigma = torch.where(unattainable, lower, mid)
    clamped = unattainable | (sigma < lower) | (sigma > upper)
    sigma = torch.minimum(torch.maximum(sigma, lower), upper)
    return SmoothKnn(rho, sigma, clamped)


def smooth_knn(distances: Sequence[float] | torch.Tensor, k: Optional[int] = None) -> tuple[float, float, bool]:
    """Calibrates one point from its ascending neighbor distances.

    ``rho`` is the smallest nonzero distance (0 if all are zero) and ``sigma`` solves
    :math:`\\sum_j \\exp(-\\max(0, d_j - \\rho)/\\sigma) = \\log_2 k` by bisection
    (64 iterations, tolerance ``1e-5``). When no solution exists, or it lies outside
    ``[1e-3, 1e3]`` times the mean distance, ``sigma`` is clamped.

    Example:
        >>> smooth_knn([1.0, 2.0, 3.0])
        (1.0, 1.133..., False)

    Args:
        distances (Sequence[float] | torch.Tensor): Ascending distances.
        k (int, optional): Number of neighbors; defaults to ``len(distances)``.

    Returns:
        tuple[float, float, bool]: ``(rho, sigma, clamped)``.
    """
    d = torch.as_tensor(distances, dtype=torch.float64).flatten()
    if k is not None and k != d.shape[0]:
        raise ValueError(f"Expected {k} distances, got {d.shape[0]}")
    if d.shape[0] < 2:
        raise ValueError("smooth_knn needs at least two distances")
    result = smooth_knn_batch(d.unsqueeze(0))
    return float(result.rho[0]), float(result.sigma[0]), bool(result.clamped[0])


def fuzzy_simplicial_set(knn: KnnResult, calibration: SmoothKnn) -> FuzzyGraph:
    """Builds the symmetric membership graph.

    Directed memberships are :math:`w_{ij} = \\exp(-\\max(0, d_{ij} - \\rho_i) /
    \\sigma_i)`; the two directions of an edge are combined as ``a + b - a*b``.
    Edges whose weight is zero are dropped.
    """
    n, k = knn.indices.shape
    shifted = torch.clamp(knn.distances - calibration.rho.unsqueeze(1), min=0.0)
    directed = torch.exp(-shifted / calibration.sigma.unsqueeze(1))

    rows = np.repeat(np.arange(n), k)
    cols = knn.indices.reshape(-1).numpy()
    vals = directed.reshape(-1).numpy()
    P = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    P.eliminate_zeros()
    Pt = P.transpose().tocsr()
    S = (P + Pt - P.multiply(Pt)).tocsr()
    S.eliminate_zeros()

    upper = scipy.sparse.triu(S, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    return FuzzyGraph(
        n=n,
        head=torch.from_numpy(upper.row[order].astype(np.int64)),
        tail=torch.from_numpy(upper.col[order].astype(np.int64)),
        weight=torch.from_numpy(np.clip(upper.data[order], 0.0, 1.0).astype(np.float64)),
    )


def fit_ab(min_dist: float, spread: float = 1.0) -> tuple[float, float, float]:
    """Fits ``1 / (1 + a d^(2b))`` to the target membership curve, which is 1 up
    to ``min_dist`` and ``exp(-(d - min_dist) / spread)`` after it, on 300 points
    spread evenly over ``[0, 3 * spread]``.

    Raises:
        ValueError: If ``spread`` is not positive.
        RuntimeError: If the least-squares fit does not converge.

    Returns:
        tuple[float, float, float]: ``(a, b, rms)`` where ``rms`` is the root mean
        square residual of the fit.
    """
    log = logging.getLogger("sumtopic.main")

    if spread <= 0:
        raise ValueError(f"spread must be positive, got {spread}")

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    try:
        params, _ = curve_fit(curve, xv, yv, p0=(1.0, 1.0), maxfev=10000)
    except RuntimeError as e:
        raise RuntimeError(
            f"Curve fit for min_dist={min_dist}, spread={spread} did not converge: {e}"
        ) from e
    a, b = float(params[0]), float(params[1])
    rms = float(np.sqrt(np.mean((curve(xv, a, b) - yv) ** 2)))
    if rms >= 0.02:
        log.warning("Curve fit residual %.4f for min_dist=%g, spread=%g", rms, min_dist, spread)
    return a, b, rms


def _make_epochs_per_sample(weights: torch.Tensor) -> torch.Tensor:
    return weights.max() / weights


def _clip(grad: torch.Tensor) -> torch.Tensor:
    return torch.clamp(grad, -4.0, 4.0)


def optimize_layout(
    graph: FuzzyGraph,
    params: UmapParams,
    a: Optional[float] = None,
    b: Optional[float] = None,
) -> torch.Tensor:
    """Lays out ``graph`` in ``params.n_components`` dimensions.

    Coordinates start uniformly in ``[-10, 10]``. Both directions of every edge
    are sampled once per ``max(w) / w`` epochs; a sampled edge pulls its endpoints
    together and pushes its source away from ``negative_sample_rate`` uniformly
    drawn vertices. All updates due in an epoch are computed from the positions at
    the start of the epoch, summed per vertex and clipped, so the result depends
    only on the seed. The learning rate decays linearly to 0.

    Raises:
        ValueError: If the graph has no vertices.

    Returns:
        torch.Tensor: ``float64`` coordinates of shape ``(n, n_components)``.
    """
    log = logging.getLogger("sumtopic.main")

    n = graph.n
    if n == 0:
        raise ValueError("Cannot lay out an empty graph")
    if a is None or b is None:
        a, b, _ = fit_ab(params.min_dist, params.spread)

    generator = torch.Generator().manual_seed(params.seed)
    Y = torch.rand((n, params.n_components), generator=generator, dtype=torch.float64)
    Y = Y * 20.0 - 10.0
    if graph.weight.numel() == 0:
        return Y

    # each undirected edge acts once from either end
    head = torch.cat([graph.head, graph.tail])
    tail = torch.cat([graph.tail, graph.head])
    epochs_per_sample = _make_epochs_per_sample(torch.cat([graph.weight, graph.weight]))
    epochs_per_negative = epochs_per_sample / params.negative_sample_rate
    next_sample = epochs_per_sample.clone()
    next_negative = epochs_per_negative.clone()

    n_epochs = params.n_epochs
    for epoch in range(n_epochs):
        alpha = params.initial_learning_rate * (1.0 - epoch / n_epochs)
        active = torch.nonzero(next_sample <= epoch).flatten()
        if active.numel() == 0:
            continue

        delta = torch.zeros_like(Y)
        h, t = head[active], tail[active]
        diff = Y[h] - Y[t]
        d2 = (diff * diff).sum(dim=1)
        coeff = torch.where(
            d2 > 0,
            -2.0 * a * b * d2.clamp(min=1e-300) ** (b - 1.0) / (a * d2**b + 1.0),
            torch.zeros_like(d2),
        )
        grad = _clip(coeff.unsqueeze(1) * diff) * alpha
        delta.index_add_(0, h, grad)
        delta.index_add_(0, t, -grad)
        next_sample[active] += epochs_per_sample[active]

        n_neg = torch.floor(
            (epoch - next_negative[active]) / epochs_per_negative[active]
        ).clamp(min=0).to(torch.long)
        next_negative[active] += n_neg.to(torch.float64) * epochs_per_negative[active]
        total = int(n_neg.sum())
        if total > 0:
            src = torch.repeat_interleave(h, n_neg)
            dst = torch.randint(0, n, (total,), generator=generator)
            keep = src != dst
            src, dst = src[keep], dst[keep]
            diff = Y[src] - Y[dst]
            d2 = (diff * diff).sum(dim=1)
            coeff = 2.0 * b / ((0.001 + d2) * (a * d2**b + 1.0))
            grad = torch.where(
                (d2 > 0).unsqueeze(1), _clip(coeff.unsqueeze(1) * diff), torch.zeros_like(diff)
            )
            delta.index_add_(0, src, grad * alpha)

        Y += torch.clamp(delta, -4.0 * alpha, 4.0 * alpha)
        if epoch % 50 == 0:
            log.debug("Layout epoch %d/%d: %d edges sampled", epoch, n_epochs, active.numel())

    return Y


def umap_fit_transform(
    X: torch.Tensor,
    params: UmapParams,
    doc_ids: Optional[Sequence[str]] = None,
) -> ReducedMatrix:
    """Reduces the rows of ``X`` (an embedding tensor, or an object with ``rows`` and
    ``doc_ids`` such as :class:`~sumtopic.embed.EmbeddingMatrix`).

    Raises:
        ValueError: If there are not more points than ``n_neighbors``, or another
          parameter is invalid.
    """
    log = logging.getLogger("sumtopic.main")

    if hasattr(X, "rows"):
        doc_ids = X.doc_ids if doc_ids is None else doc_ids
        X = X.rows
    n = X.shape[0]
    if n <= params.n_neighbors:
        raise ValueError(
            f"UMAP needs more points than n_neighbors ({n} <= {params.n_neighbors})"
        )
    params.validate(n)
    doc_ids = tuple(doc_ids) if doc_ids is not None else tuple(str(i) for i in range(n))

    log.info(
        "Fitting UMAP on %d points: %d neighbors, %d components, seed %d",
        n,
        params.n_neighbors,
        params.n_components,
        params.seed,
    )
    knn = knn_exact(X, params.n_neighbors, params.metric)
    calibration = smooth_knn_batch(knn.distances)
    n_clamped = int(calibration.clamped.sum())
    if n_clamped:
        log.warning("%d of %d bandwidths were clamped", n_clamped, n)
    graph = fuzzy_simplicial_set(knn, calibration)
    a, b, _ = fit_ab(params.min_dist, params.spread)
    coords = optimize_layout(graph, params, a, b)
    return ReducedMatrix(doc_ids, coords, n_clamped, a, b)


def save_reduced(reduced: ReducedMatrix, path, corpus_hash: str = ""):
    """Persists reduced coordinates in the embedding file format, tagged
    ``'reduce'``. The fitted curve parameters are kept in the provider field.
    """
    provider_id = f"umap;a={reduced.a!r};b={reduced.b!r};c={reduced.n_clamped}"
    return save_matrix(path, reduced.doc_ids, reduced.coords, provider_id, corpus_hash, "reduce")


def load_reduced(path) -> ReducedMatrix:
    """Reads coordinates written by :func:`save_reduced`.

    Raises:
        ValueError: If the file holds a matrix of another stage.
    """
    stored = load_matrix(path)
    if stored.stage != "reduce":
        raise ValueError(f"{path} holds '{stored.stage}' rows, not reduced coordinates")
    _, a, b, c = stored.provider_id.split(";")
    return ReducedMatrix(
        stored.doc_ids, stored.rows.to(torch.float64), int(c[2:]), float(a[2:]), float(b[2:])
    )
