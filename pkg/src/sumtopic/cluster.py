"""HDBSCAN density clustering over reduced coordinates.

The stages mirror the classic algorithm: core distances, the mutual reachability
distance, a minimum spanning tree over it (dense Prim's, so memory stays linear
while time is quadratic), the condensed cluster tree and the excess-of-mass
cluster selection.
"""
from __future__ import annotations
import json
import logging
from pathlib import Path
from typing import NamedTuple, Optional

import torch

__all__ = [
    "HdbscanParams",
    "MstEdge",
    "CondensedTree",
    "ClusterLabels",
    "LAMBDA_CAP",
    "core_distances",
    "mutual_reachability",
    "mst",
    "condense",
    "extract_eom",
    "hdbscan_fit",
    "condensed_tree_to_json",
]

LAMBDA_CAP = 1e12


class HdbscanParams(NamedTuple):
    """Settings of :func:`hdbscan_fit`.

    Args:
        min_cluster_size (int): Smallest group of documents that counts as a topic.
        min_samples (int, optional): Neighbor rank of the core distance. Defaults to
          ``min_cluster_size``.
    """

    min_cluster_size: int
    min_samples: Optional[int] = None

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)

    @property
    def k(self) -> int:
        return self.min_cluster_size if self.min_samples is None else self.min_samples

    def validate(self) -> HdbscanParams:
        if self.min_cluster_size < 2:
            raise ValueError(
                f"min_cluster_size must be at least 2, got {self.min_cluster_size}"
            )
        if self.k < 1:
            raise ValueError(f"min_samples must be at least 1, got {self.min_samples}")
        return self


class MstEdge(NamedTuple):
    i: int
    j: int
    weight: float


class CondensedTree(NamedTuple):
    """Condensed cluster hierarchy.

    Points are numbered ``0..n-1`` and clusters ``n, n+1, ...`` with ``n`` the root.
    Each row ``k`` says that ``child[k]`` (a point, or a cluster when
    ``child_size[k] > 1`` and ``child[k] >= n``) leaves ``parent[k]`` at
    ``lambda_val[k]``.

    Args:
        n_points (int): Number of clustered points.
        parent (tuple[int, ...]): Parent cluster of each row.
        child (tuple[int, ...]): Child point or cluster of each row.
        lambda_val (tuple[float, ...]): ``1 / distance`` at which the child leaves.
        child_size (tuple[int, ...]): Points in the child.
    """

    n_points: int
    parent: tuple[int, ...]
    child: tuple[int, ...]
    lambda_val: tuple[float, ...]
    child_size: tuple[int, ...]

    @property
    def root(self) -> int:
        return self.n_points

    @property
    def clusters(self) -> list[int]:
        """Cluster ids in creation order, root first."""
        return [self.root] + [
            c for c, s in zip(self.child, self.child_size) if c >= self.n_points
        ]

    def children(self, cluster: int) -> list[int]:
        return [
            c
            for p, c in zip(self.parent, self.child)
            if p == cluster and c >= self.n_points
        ]

    def birth_lambda(self) -> dict[int, float]:
        births = {self.root: 0.0}
        for c, lam in zip(self.child, self.lambda_val):
            if c >= self.n_points:
                births[c] = lam
        return births

    def stability(self) -> dict[int, float]:
        """Per-cluster stability: the sum over the rows leaving the cluster of
        ``(lambda - lambda_birth) * child_size``.
        """
        births = self.birth_lambda()
        result = {c: 0.0 for c in births}
        for p, lam, size in zip(self.parent, self.lambda_val, self.child_size):
            result[p] += (lam - births[p]) * size
        return result


class ClusterLabels(NamedTuple):
    """Flat clustering.

    Args:
        labels (torch.Tensor): Per-point label, ``-1`` for noise and ``0..C-1`` for
          clusters numbered by decreasing size.
        n_clusters (int): Number of clusters ``C``.
        selected (tuple[int, ...]): Condensed tree cluster behind each label.
    """

    labels: torch.Tensor
    n_clusters: int
    selected: tuple[int, ...] = ()

    @property
    def sizes(self) -> list[int]:
        return [int((self.labels == c).sum()) for c in range(self.n_clusters)]

    @property
    def n_noise(self) -> int:
        return int((self.labels == -1).sum())


def _distances_from(X: torch.Tensor, i: int) -> torch.Tensor:
    return torch.linalg.vector_norm(X - X[i], dim=1)


def core_distances(X: torch.Tensor, k: int) -> torch.Tensor:
    """Euclidean distance of every point to its ``k``-th nearest other point.

    Raises:
        ValueError: If ``k`` is not in ``[1, n)``.
    """
    X = torch.as_tensor(X, dtype=torch.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (got k={k}, n={n})")
    core = torch.empty(n, dtype=torch.float64)
    for start in range(0, n, 1024):
        stop = min(start + 1024, n)
        block = torch.cdist(X[start:stop], X, compute_mode="donot_use_mm_for_euclid_dist")
        # the point itself is the first of the k + 1 smallest
        core[start:stop] = torch.topk(block, k + 1, dim=1, largest=False).values[:, k]
    return core


def mutual_reachability(
    X: torch.Tensor, core: torch.Tensor, i: int, j: Optional[int] = None
) -> torch.Tensor | float:
    """``max(core[a], core[b], d(a, b))``, with 0 on the diagonal.

    Returns the row of point ``i`` against every point, or the single value for
    the pair ``(i, j)``.
    """
    X = torch.as_tensor(X, dtype=torch.float64)
    row = torch.maximum(torch.maximum(_distances_from(X, i), core), core[i])
    row[i] = 0.0
    return row if j is None else float(row[j])


def mst(X: torch.Tensor, core: torch.Tensor) -> list[MstEdge]:
    """Minimum spanning tree of the mutual reachability graph by Prim's algorithm.

    The matrix is never materialized: one row is computed per added vertex. Among
    equal weights the edge with the smaller ``(min index, max index)`` wins, and the
    edges come back sorted by ``(weight, min index, max index)``.

    Raises:
        ValueError: If there are fewer than two points.
    """
    X = torch.as_tensor(X, dtype=torch.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError(f"A spanning tree needs at least 2 points, got {n}")

    idx = torch.arange(n)
    in_tree = torch.zeros(n, dtype=torch.bool)
    best = torch.full((n,), float("inf"), dtype=torch.float64)
    source = torch.zeros(n, dtype=torch.long)
    edges = []
    current = 0
    for _ in range(n - 1):
        in_tree[current] = True
        row = mutual_reachability(X, core, current)
        lo = torch.minimum(idx, torch.full_like(idx, current))
        hi = torch.maximum(idx, torch.full_like(idx, current))
        old_lo = torch.minimum(idx, source)
        old_hi = torch.maximum(idx, source)
        better = (row < best) | (
            (row == best) & ((lo < old_lo) | ((lo == old_lo) & (hi < old_hi)))
        )
        better &= ~in_tree
        best = torch.where(better, row, best)
        source = torch.where(better, torch.full_like(source, current), source)

        weight = torch.where(in_tree, torch.full_like(best, float("inf")), best)
        m = weight.min()
        tied = torch.nonzero(weight == m).flatten()
        key = torch.minimum(tied, source[tied]) * n + torch.maximum(tied, source[tied])
        current = int(tied[torch.argmin(key)])
        a, b = sorted((int(source[current]), current))
        edges.append(MstEdge(a, b, float(m)))

    edges.sort(key=lambda e: (e.weight, e.i, e.j))
    return edges


def _to_lambda(distance: float) -> float:
    return LAMBDA_CAP if distance <= 0 else min(1.0 / distance, LAMBDA_CAP)


def _single_linkage(edges: list[MstEdge], n: int) -> list[tuple[int, int, float, int]]:
    """Merges sorted MST edges into a dendrogram. Row ``r`` creates node ``n + r``
    from ``(left, right, distance, size)``.
    """
    parent = list(range(2 * n - 1))
    size = [1] * n + [0] * (n - 1)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    merges = []
    for r, (i, j, w) in enumerate(edges):
        a, b = find(i), find(j)
        node = n + r
        parent[a] = parent[b] = node
        size[node] = size[a] + size[b]
        merges.append((a, b, w, size[node]))
    return merges


def condense(edges: list[MstEdge], n_points: int, min_cluster_size: int) -> CondensedTree:
    """Builds the condensed tree from MST edges sorted ascending.

    Walking the dendrogram from the root, a split creates two child clusters only
    when both sides hold at least ``min_cluster_size`` points. Otherwise the small
    side's points fall out of the parent at the split's lambda and the parent
    continues as the large side.
    """
    n = n_points
    if n == 1:
        return CondensedTree(1, (), (), (), ())
    edges = sorted(edges, key=lambda e: (e[2], min(e[0], e[1]), max(e[0], e[1])))
    merges = _single_linkage(edges, n)

    def node_size(node: int) -> int:
        return 1 if node < n else merges[node - n][3]

    def leaves(node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            x = stack.pop()
            if x < n:
                out.append(x)
            else:
                left, right = merges[x - n][:2]
                stack.extend((right, left))
        return sorted(out)

    rows: list[tuple[int, int, float, int]] = []
    next_label = n + 1
    # (dendrogram node, condensed cluster it belongs to)
    stack = [(2 * n - 2, n)]
    while stack:
        node, cluster = stack.pop()
        if node < n:
            rows.append((cluster, node, LAMBDA_CAP, 1))
            continue
        left, right, distance, _ = merges[node - n]
        lam = _to_lambda(distance)
        left_size, right_size = node_size(left), node_size(right)
        left_big = left_size >= min_cluster_size
        right_big = right_size >= min_cluster_size

        if left_big and right_big:
            for child, child_size in ((left, left_size), (right, right_size)):
                rows.append((cluster, next_label, lam, child_size))
                stack.append((child, next_label))
                next_label += 1
        else:
            for child, big in ((left, left_big), (right, right_big)):
                if big:
                    stack.append((child, cluster))
                else:
                    rows.extend((cluster, p, lam, 1) for p in leaves(child))

    # clusters in creation order, points by the order they leave
    rows.sort(key=lambda r: (r[0], -1 if r[3] > 1 else 0, r[2], r[1]))
    parent, child, lambda_val, child_size = zip(*rows)
    return CondensedTree(n, parent, child, lambda_val, child_size)


def extract_eom(tree: CondensedTree) -> ClusterLabels:
    """Selects clusters by excess of mass and labels the points.

    Bottom-up, a cluster keeps itself only when its stability exceeds the summed
    stability of its best descendants; otherwise, ties included, it passes that
    sum upwards. The
    root is never selected. A point belongs to the selected cluster it left, or
    below which it left; all other points are noise.
    """
    n = tree.n_points
    stability = tree.stability()
    clusters = tree.clusters
    children = {c: tree.children(c) for c in clusters}

    best = dict(stability)
    chosen: dict[int, list[int]] = {}
    for c in sorted(clusters, reverse=True):
        kids = children[c]
        subtree = sum(best[k] for k in kids)
        if kids and subtree >= stability[c]:
            best[c] = subtree
            chosen[c] = [s for k in kids for s in chosen[k]]
        else:
            chosen[c] = [c]
    selected = [] if tree.root not in chosen else [
        s for k in children[tree.root] for s in chosen[k]
    ]

    parent_of = {}
    for p, c in zip(tree.parent, tree.child):
        parent_of[c] = p
    owner = {}
    selected_set = set(selected)
    for c in clusters:
        x = c
        while x not in selected_set and x in parent_of:
            x = parent_of[x]
        owner[c] = x if x in selected_set else -1

    raw = torch.full((n,), -1, dtype=torch.long)
    for p, c in zip(tree.parent, tree.child):
        if c < n:
            raw[c] = owner[p]

    sizes = {s: int((raw == s).sum()) for s in selected}
    order = sorted(selected, key=lambda s: (-sizes[s], s))
    labels = torch.full((n,), -1, dtype=torch.long)
    for label, s in enumerate(order):
        labels[raw == s] = label
    return ClusterLabels(labels, len(order), tuple(order))


def hdbscan_fit(X: torch.Tensor, params: HdbscanParams) -> ClusterLabels:
    """Clusters the rows of ``X`` (a coordinate tensor or a
    :class:`~sumtopic.reduce.ReducedMatrix`).

    ``min_samples`` is reduced to ``n - 1`` on datasets too small for it.

    Raises:
        ValueError: If the parameters are invalid or there are fewer points than
          ``min_cluster_size``.
    """
    log = logging.getLogger("sumtopic.main")

    if hasattr(X, "coords"):
        X = X.coords
    X = torch.as_tensor(X, dtype=torch.float64)
    params.validate()
    n = X.shape[0]
    if n < params.min_cluster_size:
        raise ValueError(
            f"Cannot cluster {n} points with min_cluster_size={params.min_cluster_size}"
        )
    k = min(params.k, n - 1)
    if k != params.k:
        log.debug("min_samples reduced from %d to %d", params.k, k)

    core = core_distances(X, k)
    edges = mst(X, core)
    tree = condense(edges, n, params.min_cluster_size)
    result = extract_eom(tree)
    log.info(
        "HDBSCAN found %d clusters (min_cluster_size=%d), %d noise points",
        result.n_clusters,
        params.min_cluster_size,
        result.n_noise,
    )
    return result


def condensed_tree_to_json(tree: CondensedTree, path: Optional[str | Path] = None) -> str:
    """Dumps the condensed tree rows and stabilities as JSON, optionally to a file."""
    stability = tree.stability()
    payload = {
        "n_points": tree.n_points,
        "rows": [
            {"parent": p, "child": c, "lambda": lam, "size": s}
            for p, c, lam, s in zip(tree.parent, tree.child, tree.lambda_val, tree.child_size)
        ],
        "stability": {str(c): stability[c] for c in sorted(stability)},
    }
    text = json.dumps(payload, indent=1)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
